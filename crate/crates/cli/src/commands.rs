use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pseudoradar::contrastive::{run_gradcheck, toy_pretrain, ContrastiveError};
use pseudoradar::gmm::{fit_em, load_gmm, save_gmm};
use pseudoradar::l2r::{l2r_pipeline, NearestNeighborFlow};
use pseudoradar::metrics::{mean_chamfer, MetricsError};
use pseudoradar::pointcloud::{read_frame_dir, write_frame_dir, FrameFormat, LidarFrame, RadarFrame};
use pseudoradar::synth::{gen_feature_batch, gen_scene, write_corpus, FeatureBatchSpec, Manifest, SceneSpec, LIDAR_DIR};
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{chamfer_svg, write_file, write_report};
use crate::CheckFailed;

pub const SAMPLE_REPORT: &str = "report.json";

pub fn synth_gen(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    frames: usize,
    objects: Option<usize>,
    out: PathBuf,
    format: FrameFormat,
) -> anyhow::Result<()> {
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.out = Some(out.clone());
    let mut spec = SceneSpec { seed: cfg.seed, n_frames: frames, ..Default::default() };
    if let Some(n) = objects {
        spec.n_objects = n;
    }
    let batch = FeatureBatchSpec { seed: cfg.seed, ..Default::default() };
    let scene = gen_scene(&spec)?;
    let manifest = write_corpus(&out, &spec, &batch, &scene, format)?;
    println!("wrote {} frames to {}", manifest.frames.len(), out.display());
    Ok(())
}

fn read_counts(path: &Path) -> anyhow::Result<Vec<i64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut counts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line
            .parse()
            .with_context(|| format!("{} line {}: `{line}` is not an integer", path.display(), i + 1))?;
        if v <= 0 {
            bail!("{} line {}: count must be positive, got {v}", path.display(), i + 1);
        }
        counts.push(v);
    }
    Ok(counts)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_gmm(
    cfg: &mut RunConfig,
    counts: &Path,
    components: usize,
    out: &Path,
    report: Option<PathBuf>,
    seed: Option<u64>,
    tol: f64,
    max_iter: usize,
) -> anyhow::Result<()> {
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.gmm = Some(out.to_path_buf());
    let data = read_counts(counts)?;
    let fit = fit_em(&data, components, tol, max_iter, cfg.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_gmm(&fit.model, out).with_context(|| format!("writing {}", out.display()))?;
    let report = report.unwrap_or_else(|| {
        let stem = out.file_stem().unwrap_or_default().to_string_lossy();
        out.with_file_name(format!("{stem}.fit.json"))
    });
    let result = json!({
        "counts": counts,
        "samples": data.len(),
        "components": components,
        "final_log_likelihood": fit.final_log_likelihood(),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "log_likelihood_trace": fit.log_likelihood_trace,
        "model": fit.model,
    });
    write_report(&report, "fit-gmm", cfg, result)?;
    println!(
        "K={components} log-likelihood {:.6} after {} iterations",
        fit.final_log_likelihood(),
        fit.iterations
    );
    Ok(())
}

/// A corpus directory contributes its `lidar/` subdirectory.
fn lidar_dir(input: &Path) -> PathBuf {
    let sub = input.join(LIDAR_DIR);
    if sub.is_dir() {
        sub
    } else {
        input.to_path_buf()
    }
}

pub fn sample(cfg: &RunConfig, format: FrameFormat) -> anyhow::Result<()> {
    let input = cfg.input.as_deref().context("no input directory (--input or `input` in the config)")?;
    let gmm_path = cfg.gmm.as_deref().context("no GMM model (--gmm or `gmm` in the config)")?;
    let out = cfg.out.as_deref().context("no output directory (--out or `out` in the config)")?;
    let gmm = load_gmm(gmm_path).with_context(|| format!("loading GMM {}", gmm_path.display()))?;
    let frames: Vec<LidarFrame> = read_frame_dir(&lidar_dir(input))?;
    let output = l2r_pipeline(&frames, &gmm, &cfg.sampling(), &NearestNeighborFlow)?;
    write_frame_dir(out, &output.frames, format)?;
    let points: usize = output.frames.iter().map(|f| f.points.len()).sum();
    write_report(
        &out.join(SAMPLE_REPORT),
        "sample",
        cfg,
        json!({ "frames": output.frames.len(), "points": points, "reports": output.reports }),
    )?;
    println!("sampled {} frames ({points} points) into {}", output.frames.len(), out.display());
    Ok(())
}

pub fn chamfer(cfg: &RunConfig, a: &Path, b: &Path, report: &Path, plot: Option<&Path>) -> anyhow::Result<()> {
    let fa: Vec<RadarFrame> = read_frame_dir(a)?;
    let fb: Vec<RadarFrame> = read_frame_dir(b)?;
    let result = match mean_chamfer(&fa, &fb) {
        Ok(r) => r,
        Err(MetricsError::Orphans { only_pseudo, only_reference }) => bail!(
            "frame ids differ: only in {}: [{}]; only in {}: [{}]",
            a.display(),
            only_pseudo.join(", "),
            b.display(),
            only_reference.join(", ")
        ),
        Err(e) => return Err(e.into()),
    };
    write_report(report, "chamfer", cfg, json!({ "a": a, "b": b, "chamfer": result }))?;
    if let Some(plot) = plot {
        write_file(plot, chamfer_svg(&result).as_bytes())?;
    }
    println!("{}", result.mean);
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, report: Option<&Path>, corrupt: Option<&str>) -> anyhow::Result<()> {
    let entries = run_gradcheck(cfg.seed, corrupt)?;
    for e in &entries {
        let status = if e.passed { "ok" } else { "FAIL" };
        println!("{:<18} max rel err {:.3e}  {status}", e.component, e.max_rel_error);
    }
    if let Some(path) = report {
        write_report(path, "gradcheck", cfg, json!({ "seed": cfg.seed, "components": entries }))?;
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.component.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("gradient mismatch in {}", failed.join(", "))).into())
    }
}

pub fn pretrain_toy(cfg: &RunConfig, steps: usize, lr: f64, report: &Path, learn_maps: bool) -> anyhow::Result<()> {
    let corpus = cfg.corpus.as_deref().context("no corpus directory (--corpus or `corpus` in the config)")?;
    let manifest = Manifest::load(corpus)?;
    let batch = gen_feature_batch(&manifest.feature_batch)?;
    let trace = match toy_pretrain(&batch.scenes, &cfg.contrastive(), steps, lr, cfg.seed, learn_maps) {
        Ok(t) => t,
        Err(ContrastiveError::Divergence { step }) => {
            return Err(CheckFailed(format!("loss became non-finite at step {step}")).into())
        }
        Err(e) => return Err(e.into()),
    };
    let (first, last) = (trace.initial_loss(), trace.final_loss());
    write_report(
        report,
        "pretrain-toy",
        cfg,
        json!({
            "corpus": corpus,
            "feature_batch": manifest.feature_batch,
            "steps": steps,
            "lr": lr,
            "learn_maps": learn_maps,
            "initial_loss": first,
            "final_loss": last,
            "similarity_gap": trace.similarity_gap(),
            "trace": trace,
        }),
    )?;
    println!("loss {first:.6} -> {last:.6}, similarity gap {:.4}", trace.similarity_gap());
    if last < first {
        Ok(())
    } else {
        Err(CheckFailed(format!("final loss {last} did not drop below initial loss {first}")).into())
    }
}
