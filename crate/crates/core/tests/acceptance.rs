//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test -p pseudoradar --test acceptance -- --nocapture`.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use pseudoradar::contrastive::{
    info_nce, run_gradcheck, sliding_window_match, toy_pretrain, total_loss, ContrastiveConfig,
    ModelParams, GRADCHECK_TOLERANCE,
};
use pseudoradar::gmm::{fit_em, DEFAULT_MAX_ITER, DEFAULT_TOL};
use pseudoradar::l2r::{
    l2r_pipeline, l2r_pipeline_detailed, NearestNeighborFlow, SamplingConfig, WeightAblation,
};
use pseudoradar::metrics::{chamfer, mean_chamfer};
use pseudoradar::pointcloud::{encode_native, read_frame_dir, LidarFrame, RadarFrame};
use pseudoradar::rng::seeded;
use pseudoradar::spatial::KdTree;
use pseudoradar::synth::{gen_feature_batch, FeatureBatchSpec};
use pseudoradar::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const SAMPLER_SEED: u64 = 7;
const GMM_SEED: u64 = 1;

fn l2r_chamfer(lidar: &[LidarFrame], radar: &[RadarFrame], k: usize, ablation: WeightAblation) -> f64 {
    let counts: Vec<i64> = radar.iter().map(|f| f.points.len() as i64).collect();
    let gmm = fit_em(&counts, k, DEFAULT_TOL, DEFAULT_MAX_ITER, GMM_SEED).unwrap().model;
    let cfg = SamplingConfig { seed: SAMPLER_SEED, ..Default::default() }.ablated(ablation);
    let out = l2r_pipeline(lidar, &gmm, &cfg, &NearestNeighborFlow).unwrap();
    mean_chamfer(&out.frames, radar).unwrap().mean
}

#[test]
fn criterion_01_gradients() {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    for seed in 0..3 {
        for e in run_gradcheck(seed, None).unwrap() {
            match worst.iter_mut().find(|(c, _)| *c == e.component) {
                Some(w) => w.1 = w.1.max(e.max_rel_error),
                None => worst.push((e.component, e.max_rel_error)),
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst.len() == 6 && worst.iter().all(|(_, e)| *e < GRADCHECK_TOLERANCE) && elapsed < Duration::from_secs(60);
    let detail = worst.iter().map(|(c, e)| format!("{c}={e:.1e}")).collect::<Vec<_>>().join(" ");
    assert!(report(1, "gradient correctness", ok, format!("{detail} in {elapsed:.1?}")));
}

#[test]
fn criterion_02_info_nce_closed_forms() {
    let same = Tensor::new(vec![4, 3], [0.2, -1.0, 0.7].repeat(4)).unwrap();
    let uniform = info_nce(&same, &same, 0.07).unwrap();
    let single = info_nce(
        &Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
        &Tensor::new(vec![1, 2], vec![-3.0, 0.5]).unwrap(),
        0.07,
    )
    .unwrap();
    let eye = Tensor::eye(2);
    let pair = info_nce(&eye, &eye, 1.0).unwrap();
    let ok = (uniform - 4f64.ln()).abs() < 1e-9 && single == 0.0 && (pair - 0.313262).abs() < 1e-6;
    assert!(report(
        2,
        "InfoNCE closed forms",
        ok,
        format!("uniform N=4 {uniform:.12}, N=1 {single}, identity N=2 {pair:.6}")
    ));
}

#[test]
fn criterion_03_chamfer_oracle() {
    let start = Instant::now();
    let results: Vec<(f64, bool)> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(1000 + i);
            let (n, m) = (rng.random_range(1..=2000), rng.random_range(1..=2000));
            let planar = i % 2 == 0;
            let p = random_cloud(&mut rng, n, 60.0, planar);
            let q = random_cloud(&mut rng, m, 60.0, planar);
            let fast = chamfer(&p, &q).unwrap();
            let slow = brute_chamfer(&p, &q);
            let rel = (fast - slow).abs() / slow.max(f64::MIN_POSITIVE);
            let exact = fast == chamfer(&q, &p).unwrap() && chamfer(&p, &p).unwrap() == 0.0;
            (rel, exact)
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let exact = results.iter().all(|r| r.1);
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && exact && elapsed < Duration::from_secs(120);
    assert!(report(
        3,
        "Chamfer oracle equivalence",
        ok,
        format!("200 pairs, max rel err {worst:.1e}, symmetry/identity exact {exact}, {elapsed:.1?}")
    ));
}

#[test]
fn criterion_04_knn_oracle() {
    let mut rng = seeded(44);
    let points = random_cloud(&mut rng, 1000, 100.0, false);
    let tree = KdTree::build(&points).unwrap();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let q = [rng.random_range(-110.0..110.0), rng.random_range(-110.0..110.0), rng.random_range(-4.0..4.0)];
        let k = rng.random_range(1..=16);
        let got: Vec<(usize, f64)> = tree.k_nearest(&q, k, None).iter().map(|n| (n.index, n.dist_sq)).collect();
        if got != brute_knn(&points, &q, k) {
            mismatches += 1;
        }
    }
    assert!(report(4, "KD-tree oracle equivalence", mismatches == 0, format!("1000 queries, {mismatches} mismatches")));
}

#[test]
fn criterion_05_em_monotone() {
    let mut worst_drop: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = seeded(500 + i);
        let k = rng.random_range(1..=6);
        let clusters = rng.random_range(1..=4);
        let n = rng.random_range(k.max(10)..200);
        let centers: Vec<(f64, f64)> = (0..clusters)
            .map(|_| (rng.random_range(10.0..400.0), rng.random_range(1.0..30.0)))
            .collect();
        let counts: Vec<i64> = (0..n)
            .map(|_| {
                let (mu, sd) = centers[rng.random_range(0..clusters)];
                Normal::new(mu, sd).unwrap().sample(&mut rng).round().max(1.0) as i64
            })
            .collect();
        let fit = fit_em(&counts, k, DEFAULT_TOL, DEFAULT_MAX_ITER, i).unwrap();
        for w in fit.log_likelihood_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        for s in &fit.weight_sum_trace {
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }
    let ok = worst_drop <= 1e-9 && worst_sum <= 1e-9;
    assert!(report(
        5,
        "EM monotonicity",
        ok,
        format!("100 fits, largest log-likelihood drop {worst_drop:.1e}, largest |Σw−1| {worst_sum:.1e}")
    ));
}

#[test]
fn criterion_06_pipeline_direction() {
    let start = Instant::now();
    let scene = corpus();
    let l2r = l2r_chamfer(&scene.lidar, &scene.radar, 5, WeightAblation::None);
    let dist = l2r_chamfer(&scene.lidar, &scene.radar, 5, WeightAblation::Dist);
    let elapsed = start.elapsed();
    let ok = l2r < dist && elapsed < Duration::from_secs(300);
    assert!(report(
        6,
        "pipeline beats distance-only sampling",
        ok,
        format!("mean Chamfer l2r {l2r:.2} vs distance-only {dist:.2} m² over {} frames, {elapsed:.1?}", scene.lidar.len())
    ));
}

#[test]
fn criterion_07_gmm_insensitivity() {
    let scene = corpus();
    let values: Vec<f64> = [4, 5, 6]
        .iter()
        .map(|&k| l2r_chamfer(&scene.lidar, &scene.radar, k, WeightAblation::None))
        .collect();
    let mean = values.iter().sum::<f64>() / 3.0;
    let spread = (values.iter().copied().fold(f64::MIN, f64::max) - values.iter().copied().fold(f64::MAX, f64::min)) / mean;
    assert!(report(
        7,
        "GMM component insensitivity",
        spread < 0.05,
        format!("K=4,5,6 -> {:.2}, {:.2}, {:.2}; relative spread {:.2}%", values[0], values[1], values[2], 100.0 * spread)
    ));
}

#[test]
fn criterion_08_sampler_contracts() {
    let scene = corpus();
    let gmm = fit_em(&radar_counts(scene), 5, DEFAULT_TOL, DEFAULT_MAX_ITER, GMM_SEED).unwrap().model;
    let cfg = SamplingConfig { seed: SAMPLER_SEED, ..Default::default() };
    let run = || l2r_pipeline_detailed(&scene.lidar, &gmm, &cfg, &NearestNeighborFlow).unwrap();
    let outcomes = run();
    let mut problems = Vec::new();
    let r2 = cfg.center_radius * cfg.center_radius;
    for o in &outcomes {
        let id = &o.report.frame_id;
        if o.frame.points.iter().any(|p| p.z != 0.0) {
            problems.push(format!("{id}: z != 0"));
        }
        let mut sel = o.trace.selected.clone();
        sel.sort();
        sel.dedup();
        if sel.len() != o.trace.selected.len() {
            problems.push(format!("{id}: duplicate indices"));
        }
        if !o.report.fallback_stage1 && o.report.n1 != o.report.n_target / 2 {
            problems.push(format!("{id}: N1 {} != floor(N/2)", o.report.n1));
        }
        let frame = &scene.lidar.iter().find(|f| &f.frame_id == id).unwrap().points;
        for &s in &o.trace.selected[..o.report.n1] {
            let p = frame[o.trace.kept[s]];
            if p.x * p.x + p.y * p.y + p.z * p.z <= r2 {
                problems.push(format!("{id}: stage-1 point inside radius"));
            }
        }
        for (name, w) in [("int", &o.trace.w_int), ("dist", &o.trace.w_dist), ("spa", &o.trace.w_spa), ("final", &o.trace.w_final)] {
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                problems.push(format!("{id}: w_{name} sums to {}", w.iter().sum::<f64>()));
            }
        }
    }
    let bytes = |o: &[pseudoradar::l2r::FrameOutcome]| {
        let mut b = Vec::new();
        for x in o {
            b.extend(encode_native(&x.frame.points));
            b.extend(serde_json::to_vec(&x.report).unwrap());
        }
        b
    };
    let identical = bytes(&outcomes) == bytes(&run());
    if !identical {
        problems.push("rerun differs".into());
    }
    let fallbacks = outcomes.iter().filter(|o| o.report.fallback_stage1).count();
    assert!(report(
        8,
        "sampler contracts",
        problems.is_empty(),
        format!(
            "{} frames, {} stage-1 fallbacks, byte-identical rerun {identical}, problems {:?}",
            outcomes.len(),
            fallbacks,
            problems
        )
    ));
}

#[test]
fn criterion_09_window_recovery() {
    let spec = FeatureBatchSpec { seed: 9, scenes: 60, width: 16, noise_sigma: 0.05, max_offset: 1, ..Default::default() };
    let batch = gen_feature_batch(&spec).unwrap();
    let cfg = ContrastiveConfig::default();
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, &off) in batch.scenes.iter().zip(&batch.offsets) {
        let (c, h, w) = s.dims();
        for j in 0..w {
            let anchor = Tensor::new(vec![c, h], (0..c * h).map(|k| s.rad_bev.data()[k * w + j]).collect()).unwrap();
            let m = sliding_window_match(&anchor, &s.img_bev, j, cfg.search_width, cfg.window).unwrap();
            hit += usize::from(m.offset == off);
            total += 1;
        }
    }
    let rate = hit as f64 / total as f64;
    let planted: Vec<i64> = [-1, 0, 1].iter().map(|o| batch.offsets.iter().filter(|&&x| x == *o).count() as i64).collect();
    assert!(report(
        9,
        "sliding-window offset recovery",
        rate >= 0.9,
        format!("{hit}/{total} = {:.1}% (R={}, r={}, sigma 0.05, scenes per offset -1/0/+1: {planted:?})", 100.0 * rate, cfg.search_width, cfg.window)
    ));
}

#[test]
fn criterion_10_toy_pretraining() {
    let start = Instant::now();
    let batch = gen_feature_batch(&FeatureBatchSpec { seed: 10, ..Default::default() }).unwrap();
    let cfg = ContrastiveConfig::default();
    let trace = toy_pretrain(&batch.scenes, &cfg, 200, 0.05, 10, true).unwrap();
    let (l0, l1) = (trace.initial_loss(), trace.final_loss());
    let gap = trace.similarity_gap();
    let elapsed = start.elapsed();
    let ok = l1 < 0.5 * l0 && gap >= 0.2 && elapsed < Duration::from_secs(600);
    assert!(report(
        10,
        "toy pretraining convergence",
        ok,
        format!("loss {l0:.4} -> {l1:.4}, pos {:.3} neg {:.3} gap {gap:.3}, {elapsed:.1?}", trace.final_pos_sim, trace.final_neg_sim)
    ));
}

#[test]
fn criterion_11_lambda_arithmetic() {
    let batch = gen_feature_batch(&FeatureBatchSpec { seed: 11, ..Default::default() }).unwrap();
    let params = ModelParams::init(batch.scenes[0].dims().0, 3);
    let zero = ContrastiveConfig { lambda_global: 0.0, ..Default::default() };
    let sixth = ContrastiveConfig::default();
    let a = total_loss(&batch.scenes, &zero, &params, &mut seeded(1)).unwrap();
    let b = total_loss(&batch.scenes, &sixth, &params, &mut seeded(1)).unwrap();
    let exact_zero = a.total.to_bits() == a.local.to_bits();
    let err = (b.total - (b.local + b.global / 6.0)).abs();
    let six = b.pairs.len() == 6 && (b.pairs.iter().map(|p| p.1).sum::<f64>() - b.global).abs() < 1e-12;
    assert!(report(
        11,
        "lambda arithmetic",
        exact_zero && err < 1e-12 && six,
        format!("lambda=0 bit-exact {exact_zero}, lambda=1/6 error {err:.1e}, pair terms {}", b.pairs.len())
    ));
}

/// Optional: set `PSEUDORADAR_NUSCENES_DIR` to a directory with `lidar/`
/// (nuScenes `.bin` sweeps) and `radar/` (CSV with velocity columns), frame
/// files sharing stems or listed in `frames.json`.
#[test]
fn criterion_12_nuscenes_direction() {
    const TITLE: &str = "real-data direction (optional)";
    let Some(dir) = std::env::var_os("PSEUDORADAR_NUSCENES_DIR").map(PathBuf::from) else {
        skip(12, TITLE, "PSEUDORADAR_NUSCENES_DIR not set");
        return;
    };
    let lidar: Vec<LidarFrame> = match read_frame_dir(&dir.join("lidar")) {
        Ok(f) => f,
        Err(e) => return skip(12, TITLE, format!("unreadable lidar frames: {e}")),
    };
    let radar: Vec<RadarFrame> = match read_frame_dir(&dir.join("radar")) {
        Ok(f) => f,
        Err(e) => return skip(12, TITLE, format!("unreadable radar frames: {e}")),
    };
    if lidar.len() < 100 {
        return skip(12, TITLE, format!("only {} frames, need >= 100", lidar.len()));
    }
    let l2r = l2r_chamfer(&lidar, &radar, 5, WeightAblation::None);
    let dist = l2r_chamfer(&lidar, &radar, 5, WeightAblation::Dist);
    assert!(report(12, TITLE, l2r < dist, format!("l2r {l2r:.2} vs distance-only {dist:.2} over {} frames", lidar.len())));
}
