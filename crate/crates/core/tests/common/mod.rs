//! Independent reference implementations and shared fixtures for the
//! acceptance suite. The oracles do not call the library code they check.

#![allow(dead_code)]

use std::sync::OnceLock;

use pseudoradar::synth::{gen_scene, SceneData, SceneSpec};
use rand::Rng;

pub type P3 = [f64; 3];

pub fn sq(a: &P3, b: &P3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// All points sorted by (squared distance, index), first `k` kept.
pub fn brute_knn(points: &[P3], q: &P3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, sq(p, q))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Chamfer by exhaustive pairing.
pub fn brute_chamfer(p: &[P3], q: &[P3]) -> f64 {
    let side = |a: &[P3], b: &[P3]| {
        let mut total = 0.0;
        for x in a {
            let mut best = f64::INFINITY;
            for y in b {
                let d = sq(x, y);
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / a.len() as f64
    };
    side(p, q) + side(q, p)
}

pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, half: f64, planar: bool) -> Vec<P3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                if planar { 0.0 } else { rng.random_range(-3.0..3.0) },
            ]
        })
        .collect()
}

/// Prints one result line and returns `pass` for assertion.
pub fn report(id: u32, title: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[criterion {id:02}] {status} {title}: {detail}");
    pass
}

pub fn skip(id: u32, title: &str, why: impl std::fmt::Display) {
    println!("[criterion {id:02}] SKIP {title}: {why}");
}

pub const CORPUS_SEED: u64 = 2024;
pub const CORPUS_FRAMES: usize = 50;

/// The 50-frame synthetic corpus shared by the pipeline criteria.
pub fn corpus() -> &'static SceneData {
    static SCENE: OnceLock<SceneData> = OnceLock::new();
    SCENE.get_or_init(|| {
        gen_scene(&SceneSpec {
            seed: CORPUS_SEED,
            n_frames: CORPUS_FRAMES,
            ..Default::default()
        })
        .expect("default scene spec is valid")
    })
}

pub fn radar_counts(scene: &SceneData) -> Vec<i64> {
    scene.radar.iter().map(|f| f.points.len() as i64).collect()
}
