use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pseudoradar::pointcloud::{read_frame_dir, write_frame_dir, FrameFormat, RadarFrame, RadarPoint};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pseudoradar"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Corpus, GMM model and working directory for sampling tests.
fn corpus(frames: &str) -> TempDir {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&run(t.path(), &["synth-gen", "--seed", "4", "--frames", frames, "--out", "c"])), 0);
    let o = run(t.path(), &["fit-gmm", "--counts", "c/radar_counts.txt", "--components", "2", "--out", "g.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    t
}

#[test]
fn synth_gen_is_byte_identical_under_seed() {
    let t = TempDir::new().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&run(t.path(), &["synth-gen", "--seed", "9", "--frames", "3", "--out", out])), 0);
    }
    let (a, b) = (tree(&t.path().join("a")), tree(&t.path().join("b")));
    assert!(a.len() > 4);
    assert_eq!(a, b);
}

#[test]
fn synth_gen_zero_frames_writes_empty_manifest() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&run(t.path(), &["synth-gen", "--frames", "0", "--out", "e"])), 0);
    let m = json(t.path().join("e/manifest.json"));
    assert_eq!(m["frames"].as_array().unwrap().len(), 0);
}

#[test]
fn usage_and_io_errors_exit_2() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["synth-gen", "--bogus"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));

    fs::write(t.path().join("file"), "x").unwrap();
    let o = run(t.path(), &["synth-gen", "--out", "file/sub"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("file/sub"), "{}", stderr(&o));

    fs::write(t.path().join("bad.toml"), "tua = 0.1\n").unwrap();
    let o = run(t.path(), &["--config", "bad.toml", "gradcheck"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tua"));
}

#[test]
fn fit_gmm_single_component_is_sample_moments() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("counts.txt"), "4\n10\n\n7\n19\n").unwrap();
    let o = run(t.path(), &["fit-gmm", "--counts", "counts.txt", "--components", "1", "--out", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = json(t.path().join("m.json"));
    let c = &model["components"][0];
    assert!((c["mean"].as_f64().unwrap() - 10.0).abs() < 1e-12);
    assert!((c["var"].as_f64().unwrap() - 31.5).abs() < 1e-9);
    let report = json(t.path().join("m.fit.json"));
    assert_eq!(report["command"], "fit-gmm");
    assert!(report["result"]["final_log_likelihood"].is_f64());
    assert!(report["result"]["iterations"].is_u64());
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn fit_gmm_two_clusters_and_determinism() {
    let t = TempDir::new().unwrap();
    let counts: String = [3, 5, 4, 6, 5, 200, 204, 198, 201, 203].iter().map(|c| format!("{c}\n")).collect();
    fs::write(t.path().join("counts.txt"), counts).unwrap();
    for out in ["a.json", "b.json"] {
        let o = run(t.path(), &["fit-gmm", "--counts", "counts.txt", "--components", "2", "--out", out, "--seed", "3"]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(t.path().join("a.json")).unwrap(), fs::read(t.path().join("b.json")).unwrap());
    let mut means: Vec<f64> = json(t.path().join("a.json"))["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["mean"].as_f64().unwrap())
        .collect();
    means.sort_by(f64::total_cmp);
    assert!((means[0] - 4.6).abs() < 1e-6 && (means[1] - 201.2).abs() < 1e-6, "{means:?}");
}

#[test]
fn fit_gmm_rejects_too_many_components_and_bad_counts() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("counts.txt"), "3\n4\n").unwrap();
    let o = run(t.path(), &["fit-gmm", "--counts", "counts.txt", "--components", "3", "--out", "m.json"]);
    assert_eq!(code(&o), 2);
    fs::write(t.path().join("neg.txt"), "3\n-4\n").unwrap();
    let o = run(t.path(), &["fit-gmm", "--counts", "neg.txt", "--components", "1", "--out", "m.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn sample_is_planar_deterministic_and_beats_distance_only() {
    let t = corpus("12");
    let p = t.path();
    for (out, ablate) in [("s1", "none"), ("s2", "none"), ("sd", "dist")] {
        let o = run(p, &["sample", "--input", "c", "--gmm", "g.json", "--seed", "2", "--out", out, "--ablate-weights", ablate]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let frames_only = |d: &str| {
        let mut t = tree(&p.join(d));
        t.remove(Path::new("report.json"));
        t
    };
    assert_eq!(frames_only("s1"), frames_only("s2"));
    assert_eq!(json(p.join("s1/report.json"))["result"], json(p.join("s2/report.json"))["result"]);
    let frames: Vec<RadarFrame> = read_frame_dir(&p.join("s1")).unwrap();
    assert_eq!(frames.len(), 12);
    assert!(frames.iter().flat_map(|f| &f.points).all(|q| q.z == 0.0));

    let report = json(p.join("s1/report.json"));
    assert_eq!(report["config"]["seed"], 2);
    assert_eq!(report["result"]["reports"].as_array().unwrap().len(), 12);
    assert_eq!(json(p.join("sd/report.json"))["config"]["ablate_weights"], "dist");

    let mean = |a: &str| {
        let o = run(p, &["chamfer", "--a", a, "--b", "c/radar", "--report", &format!("{a}.json")]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).trim().parse::<f64>().unwrap()
    };
    let (l2r, dist) = (mean("s1"), mean("sd"));
    assert!(l2r < dist, "l2r {l2r} vs distance-only {dist}");
}

#[test]
fn sample_reads_config_file_and_flags_override() {
    let t = corpus("3");
    let p = t.path();
    fs::write(p.join("run.toml"), "input = \"c\"\ngmm = \"g.json\"\nout = \"s\"\nseed = 5\nalpha_spa = 1.0\n").unwrap();
    let o = run(p, &["--config", "run.toml", "sample", "--seed", "6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = &json(p.join("s/report.json"))["config"];
    assert_eq!(cfg["seed"], 6);
    assert_eq!(cfg["alpha_spa"], 1.0);
}

#[test]
fn sample_without_gmm_exits_2() {
    let t = corpus("3");
    let o = run(t.path(), &["sample", "--input", "c", "--gmm", "missing.json", "--out", "s"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.json"));
    let o = run(t.path(), &["sample", "--input", "c", "--out", "s"]);
    assert_eq!(code(&o), 2);
}

fn radar(x: f64) -> RadarPoint {
    RadarPoint { x, y: 0.0, z: 0.0, vx: 0.0, vy: 0.0, intensity: 1.0 }
}

fn frames(specs: &[(&str, &[f64])]) -> Vec<RadarFrame> {
    specs
        .iter()
        .enumerate()
        .map(|(i, (id, xs))| RadarFrame::new(*id, i as f64 * 0.05, xs.iter().map(|&x| radar(x)).collect()))
        .collect()
}

#[test]
fn chamfer_hand_corpus_and_svg() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    // f0: {0} vs {1, 3}: 1 + (1 + 9)/2 = 6; f1: {0, 2} vs {2}: (4 + 0)/2 + 0 = 2
    write_frame_dir(&p.join("a"), &frames(&[("f0", &[0.0]), ("f1", &[0.0, 2.0])]), FrameFormat::Csv).unwrap();
    write_frame_dir(&p.join("b"), &frames(&[("f0", &[1.0, 3.0]), ("f1", &[2.0])]), FrameFormat::Native).unwrap();
    let o = run(p, &["chamfer", "--a", "a", "--b", "b", "--report", "r.json", "--plot", "plots/p.svg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "4");
    let r = json(p.join("r.json"));
    assert_eq!(r["result"]["chamfer"]["per_frame"][0]["value"], 6.0);
    assert_eq!(r["result"]["chamfer"]["dimensionality"], 2);

    let svg = fs::read_to_string(p.join("plots/p.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 2);

    let o = run(p, &["chamfer", "--a", "a", "--b", "a", "--report", "self.json"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0");
}

#[test]
fn chamfer_orphans_exit_2_with_ids() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    write_frame_dir(&p.join("a"), &frames(&[("f0", &[0.0]), ("f1", &[1.0])]), FrameFormat::Csv).unwrap();
    write_frame_dir(&p.join("b"), &frames(&[("f0", &[0.0]), ("f7", &[1.0])]), FrameFormat::Csv).unwrap();
    let o = run(p, &["chamfer", "--a", "a", "--b", "b", "--report", "r.json"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("f1") && err.contains("f7"), "{err}");
    assert!(!p.join("r.json").exists());
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["gradcheck", "--report", "g.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let names: Vec<String> = json(t.path().join("g.json"))["result"]["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["component"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["info_nce", "bcsa", "local_loss", "aggregate_global", "global_loss", "total_loss"]);

    let o = run(t.path(), &["gradcheck", "--corrupt", "global_loss"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("global_loss"));
}

#[test]
fn pretrain_toy_exit_codes_and_determinism() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    assert_eq!(code(&run(p, &["synth-gen", "--frames", "1", "--out", "c"])), 0);
    for out in ["a.json", "b.json"] {
        let o = run(p, &["pretrain-toy", "--corpus", "c", "--steps", "15", "--seed", "2", "--report", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (a, b) = (json(p.join("a.json")), json(p.join("b.json")));
    assert_eq!(a["result"]["trace"], b["result"]["trace"]);
    assert_eq!(a["result"]["trace"]["steps"].as_array().unwrap().len(), 16);

    let o = run(p, &["pretrain-toy", "--corpus", "c", "--steps", "3", "--lr", "0", "--report", "flat.json"]);
    assert_eq!(code(&o), 1);
    let steps = json(p.join("flat.json"))["result"]["trace"]["steps"].clone();
    let losses: Vec<f64> = steps.as_array().unwrap().iter().map(|s| s["loss"].as_f64().unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]));

    let o = run(p, &["pretrain-toy", "--corpus", "nowhere", "--report", "x.json"]);
    assert_eq!(code(&o), 2);
}
