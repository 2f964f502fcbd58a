//! LiDAR-to-radar sampling: turns dense LiDAR frames into sparse, planar,
//! velocity-carrying pseudo-radar frames.
//!
//! Per frame, in order:
//!
//! 1. draw a target count `N` from a fitted [`Gmm1D`];
//! 2. thin redundant points with [`thin_redundant`];
//! 3. weight the survivors by intensity, sparsity and range, then draw
//!    `⌊N/2⌋` points from outside the center radius and the rest globally;
//! 4. attach velocities from a [`FlowEstimator`] against the next frame;
//! 5. flatten onto the radar plane (`z = 0`).
//!
//! Distances for range weighting and the center radius are measured from
//! the sensor origin of the input frame. Frame `i` draws its randomness from
//! sub-stream `i` of the configured seed (see [`crate::rng`]), so frames can
//! be processed in parallel with identical results.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::Gmm1D;
use crate::pointcloud::{LidarFrame, LidarPoint, PointRecord, RadarFrame, RadarPoint};
use crate::rng::{substream, SeededRng};
use crate::spatial::{dist_sq, thin_redundant, KdTree, Point3, SpatialError};

#[derive(Debug, Error)]
pub enum L2rError {
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error("{op}: length mismatch ({lhs} vs {rhs})")]
    Dimension {
        op: &'static str,
        lhs: usize,
        rhs: usize,
    },
    #[error("flow estimation: {0}")]
    Flow(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("frame {frame_id}")]
    Frame {
        frame_id: String,
        #[source]
        source: Box<L2rError>,
    },
    #[error("sequence needs at least 2 frames, got {0}")]
    SequenceTooShort(usize),
}

pub type Result<T> = std::result::Result<T, L2rError>;

/// Every knob of the sampler. Lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub alpha_int: f64,
    pub alpha_dist: f64,
    pub alpha_spa: f64,
    pub center_radius: f64,
    pub d_threshold: f64,
    /// Neighbours summed in the sparsity weight.
    pub neighbor_count: usize,
    /// Added to the squared range in the distance weight (m²).
    pub dist_epsilon: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            alpha_int: 4.0,
            alpha_dist: 4.0,
            alpha_spa: 2.0,
            center_radius: 15.0,
            d_threshold: 0.3,
            neighbor_count: 8,
            dist_epsilon: 1e-6,
            seed: 0,
        }
    }
}

/// Which weight families stay active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightAblation {
    /// All three families, as configured.
    #[default]
    None,
    /// Intensity only.
    Int,
    /// Distance only (the "sample by distance" baseline).
    Dist,
    /// Sparsity only.
    Spa,
}

impl std::str::FromStr for WeightAblation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "int" => Ok(Self::Int),
            "dist" => Ok(Self::Dist),
            "spa" => Ok(Self::Spa),
            other => Err(format!("unknown weight family `{other}` (int|dist|spa|none)")),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let alphas = [self.alpha_int, self.alpha_dist, self.alpha_spa];
        if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(L2rError::Config(format!("alphas must be finite and >= 0: {alphas:?}")));
        }
        if alphas.iter().all(|&a| a == 0.0) {
            return Err(L2rError::Config("at least one alpha must be positive".into()));
        }
        if !(self.center_radius > 0.0 && self.center_radius.is_finite()) {
            return Err(L2rError::Config(format!("center_radius {}", self.center_radius)));
        }
        if !(self.d_threshold >= 0.0 && self.d_threshold.is_finite()) {
            return Err(L2rError::Config(format!("d_threshold {}", self.d_threshold)));
        }
        if self.neighbor_count == 0 {
            return Err(L2rError::Config("neighbor_count must be >= 1".into()));
        }
        if !(self.dist_epsilon > 0.0 && self.dist_epsilon.is_finite()) {
            return Err(L2rError::Config(format!("dist_epsilon {}", self.dist_epsilon)));
        }
        Ok(())
    }

    /// Copy with every family except the kept one zeroed. The kept family's
    /// alpha is left as configured (set to 1 if it was 0).
    pub fn ablated(&self, keep: WeightAblation) -> Self {
        let mut c = self.clone();
        let slot = match keep {
            WeightAblation::None => return c,
            WeightAblation::Int => self.alpha_int,
            WeightAblation::Dist => self.alpha_dist,
            WeightAblation::Spa => self.alpha_spa,
        };
        let kept = if slot > 0.0 { slot } else { 1.0 };
        c.alpha_int = 0.0;
        c.alpha_dist = 0.0;
        c.alpha_spa = 0.0;
        match keep {
            WeightAblation::Int => c.alpha_int = kept,
            WeightAblation::Dist => c.alpha_dist = kept,
            WeightAblation::Spa => c.alpha_spa = kept,
            WeightAblation::None => unreachable!(),
        }
        c
    }
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if raw.is_empty() {
        return raw;
    }
    if !(total > 0.0) || !total.is_finite() {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    raw.into_iter().map(|w| w / total).collect()
}

/// Intensity weights `√I_i / Σ_j √I_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityWeights {
    pub weights: Vec<f64>,
    /// Set when every intensity was zero and uniform weights were used.
    pub uniform_fallback: bool,
}

pub fn intensity_weights(intensities: &[f64]) -> IntensityWeights {
    let raw: Vec<f64> = intensities.iter().map(|i| i.max(0.0).sqrt()).collect();
    let uniform_fallback = !raw.is_empty() && raw.iter().all(|&r| r == 0.0);
    IntensityWeights {
        weights: normalize(raw),
        uniform_fallback,
    }
}

/// Sparsity weights: each point's raw weight is the sum of squared distances
/// to its `neighbor_count` nearest neighbours, normalized to sum 1. A single
/// point gets weight 1.
pub fn sparsity_weights(points: &[Point3], neighbor_count: usize) -> Result<Vec<f64>> {
    if points.len() <= 1 {
        return Ok(vec![1.0; points.len()]);
    }
    let tree = KdTree::build(points)?;
    let raw = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            tree.k_nearest(p, neighbor_count, Some(i))
                .iter()
                .map(|n| n.dist_sq)
                .sum()
        })
        .collect();
    Ok(normalize(raw))
}

/// Distance weights `1 / (D_iO² + ε)`, normalized to sum 1.
pub fn distance_weights(points: &[Point3], dist_epsilon: f64) -> Vec<f64> {
    normalize(
        points
            .iter()
            .map(|p| 1.0 / (dist_sq(p, &[0.0; 3]) + dist_epsilon))
            .collect(),
    )
}

/// `α_int·w_int + α_dist·w_dist + α_spa·w_spa`, renormalized.
pub fn combine_weights(
    w_int: &[f64],
    w_dist: &[f64],
    w_spa: &[f64],
    config: &SamplingConfig,
) -> Result<Vec<f64>> {
    for (op, other) in [("combine_weights(dist)", w_dist), ("combine_weights(spa)", w_spa)] {
        if other.len() != w_int.len() {
            return Err(L2rError::Dimension {
                op,
                lhs: w_int.len(),
                rhs: other.len(),
            });
        }
    }
    Ok(normalize(
        w_int
            .iter()
            .zip(w_dist)
            .zip(w_spa)
            .map(|((i, d), s)| config.alpha_int * i + config.alpha_dist * d + config.alpha_spa * s)
            .collect(),
    ))
}

/// Weighted draw of `k` items from `candidates` without replacement
/// (Efraimidis–Spirakis keys `ln(u)/w`). One uniform is consumed per
/// candidate, in candidate order. Zero-weight items are taken last, by
/// position.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    candidates: &[usize],
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let u = 1.0 - rng.random::<f64>();
            let w = weights[idx];
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, pos, idx)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, _, idx)| idx).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageSample {
    /// Stage-1 picks first, then stage-2 picks.
    pub indices: Vec<usize>,
    pub n1: usize,
    pub n2: usize,
    /// Fewer than `⌊N/2⌋` points lay outside the center radius.
    pub fallback_stage1: bool,
    /// Fewer than `N` points were available in total.
    pub fallback_total: bool,
}

/// Draws `⌊n/2⌋` points from those farther than `center_radius` from the
/// origin, then the remainder from all unpicked points, each stage weighted
/// by `weights` renormalized over its candidates.
pub fn two_stage_sample<R: Rng + ?Sized>(
    points: &[Point3],
    weights: &[f64],
    n: usize,
    center_radius: f64,
    rng: &mut R,
) -> Result<TwoStageSample> {
    if weights.len() != points.len() {
        return Err(L2rError::Dimension {
            op: "two_stage_sample",
            lhs: points.len(),
            rhs: weights.len(),
        });
    }
    if n < 2 {
        return Err(L2rError::Config(format!("sample count {n} < 2")));
    }
    let r2 = center_radius * center_radius;
    let outside: Vec<usize> = (0..points.len())
        .filter(|&i| dist_sq(&points[i], &[0.0; 3]) > r2)
        .collect();
    let n1_target = n / 2;
    let n1 = n1_target.min(outside.len());
    let mut indices = weighted_sample_without_replacement(&outside, weights, n1, rng);

    let mut taken = vec![false; points.len()];
    indices.iter().for_each(|&i| taken[i] = true);
    let remaining: Vec<usize> = (0..points.len()).filter(|&i| !taken[i]).collect();
    let n2_target = n - n1;
    let n2 = n2_target.min(remaining.len());
    indices.extend(weighted_sample_without_replacement(&remaining, weights, n2, rng));

    Ok(TwoStageSample {
        indices,
        n1,
        n2,
        fallback_stage1: n1 < n1_target,
        fallback_total: n1 + n2 < n,
    })
}

/// Per-point velocity estimate for a frame, given its successor.
pub trait FlowEstimator: Sync {
    fn estimate(&self, current: &[LidarPoint], next: &[LidarPoint], dt: f64) -> Result<FlowEstimate>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimate {
    /// `(vx, vy, vz)` in m/s, one per point of `current`.
    pub velocities: Vec<[f64; 3]>,
    /// Set when no estimate was possible and zeros were returned.
    pub fallback: bool,
}

/// Geometric flow: each point moves to its nearest neighbour in the next
/// frame, `v = (NN(p) - p) / dt`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestNeighborFlow;

impl FlowEstimator for NearestNeighborFlow {
    fn estimate(&self, current: &[LidarPoint], next: &[LidarPoint], dt: f64) -> Result<FlowEstimate> {
        nn_flow_estimate(current, next, dt)
    }
}

pub fn nn_flow_estimate(current: &[LidarPoint], next: &[LidarPoint], dt: f64) -> Result<FlowEstimate> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(L2rError::Flow(format!("time step must be positive, got {dt}")));
    }
    if next.is_empty() {
        return Ok(FlowEstimate {
            velocities: vec![[0.0; 3]; current.len()],
            fallback: true,
        });
    }
    let targets: Vec<Point3> = next.iter().map(PointRecord::position).collect();
    let tree = KdTree::build(&targets)?;
    let velocities = current
        .iter()
        .map(|p| {
            let q = p.position();
            let nn = tree.k_nearest(&q, 1, None)[0].index;
            let t = targets[nn];
            [(t[0] - q[0]) / dt, (t[1] - q[1]) / dt, (t[2] - q[2]) / dt]
        })
        .collect();
    Ok(FlowEstimate {
        velocities,
        fallback: false,
    })
}

/// Drops altitude: `z = 0`, keeps `x, y`, intensity and planar velocity.
pub fn map_to_plane(points: &[LidarPoint], velocities: &[[f64; 3]]) -> Result<Vec<RadarPoint>> {
    if points.len() != velocities.len() {
        return Err(L2rError::Dimension {
            op: "map_to_plane",
            lhs: points.len(),
            rhs: velocities.len(),
        });
    }
    Ok(points
        .iter()
        .zip(velocities)
        .map(|(p, v)| RadarPoint {
            x: p.x,
            y: p.y,
            z: 0.0,
            vx: v[0],
            vy: v[1],
            intensity: p.intensity,
        })
        .collect())
}

/// Per-frame record of what the sampler did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: String,
    pub n_input: usize,
    pub n_after_thin: usize,
    #[serde(rename = "N")]
    pub n_target: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    pub fallback_stage1: bool,
    pub fallback_total: bool,
    pub velocity_fallback: bool,
    pub intensity_fallback: bool,
    pub seed: u64,
}

/// Intermediate values of one frame, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    /// Indices into the input frame that survived thinning.
    pub kept: Vec<usize>,
    pub w_int: Vec<f64>,
    pub w_dist: Vec<f64>,
    pub w_spa: Vec<f64>,
    pub w_final: Vec<f64>,
    /// Indices into the thinned cloud, stage-1 picks first.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub frame: RadarFrame,
    pub report: FrameReport,
    pub trace: FrameTrace,
}

/// Runs every stage on one frame. `next` supplies the flow target; `None`
/// (the final frame of a sequence) yields zero velocities, flagged.
pub fn sample_frame(
    frame: &LidarFrame,
    next: Option<&LidarFrame>,
    frame_index: u64,
    gmm: &Gmm1D,
    config: &SamplingConfig,
    flow: &dyn FlowEstimator,
) -> Result<FrameOutcome> {
    let mut rng: SeededRng = substream(config.seed, frame_index);
    let n_target = gmm.sample_count(&mut rng) as usize;

    let positions = frame.positions();
    let kept = thin_redundant(&positions, config.d_threshold)?;
    let thinned: Vec<LidarPoint> = kept.iter().map(|&i| frame.points[i]).collect();
    let thinned_pos: Vec<Point3> = kept.iter().map(|&i| positions[i]).collect();

    let intensities: Vec<f64> = thinned.iter().map(|p| p.intensity).collect();
    let w_int = intensity_weights(&intensities);
    let w_dist = distance_weights(&thinned_pos, config.dist_epsilon);
    let w_spa = sparsity_weights(&thinned_pos, config.neighbor_count)?;
    let w_final = combine_weights(&w_int.weights, &w_dist, &w_spa, config)?;

    let sample = if thinned.is_empty() {
        TwoStageSample {
            indices: Vec::new(),
            n1: 0,
            n2: 0,
            fallback_stage1: n_target / 2 > 0,
            fallback_total: true,
        }
    } else {
        two_stage_sample(&thinned_pos, &w_final, n_target, config.center_radius, &mut rng)?
    };
    let selected: Vec<LidarPoint> = sample.indices.iter().map(|&i| thinned[i]).collect();

    let flow_est = match next {
        Some(next) => {
            let dt = next.timestamp - frame.timestamp;
            flow.estimate(&selected, &next.points, dt)?
        }
        None => FlowEstimate {
            velocities: vec![[0.0; 3]; selected.len()],
            fallback: true,
        },
    };
    if flow_est.velocities.len() != selected.len() {
        return Err(L2rError::Dimension {
            op: "flow estimate",
            lhs: selected.len(),
            rhs: flow_est.velocities.len(),
        });
    }
    if flow_est.velocities.iter().flatten().any(|v| !v.is_finite()) {
        return Err(L2rError::Flow("non-finite velocity".into()));
    }
    let radar = map_to_plane(&selected, &flow_est.velocities)?;

    Ok(FrameOutcome {
        frame: RadarFrame::new(frame.frame_id.clone(), frame.timestamp, radar),
        report: FrameReport {
            frame_id: frame.frame_id.clone(),
            n_input: frame.points.len(),
            n_after_thin: thinned.len(),
            n_target,
            n1: sample.n1,
            n2: sample.n2,
            fallback_stage1: sample.fallback_stage1,
            fallback_total: sample.fallback_total,
            velocity_fallback: flow_est.fallback,
            intensity_fallback: w_int.uniform_fallback,
            seed: config.seed,
        },
        trace: FrameTrace {
            kept,
            w_int: w_int.weights,
            w_dist,
            w_spa,
            w_final,
            selected: sample.indices,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub frames: Vec<RadarFrame>,
    pub reports: Vec<FrameReport>,
}

/// Runs [`sample_frame`] over a sequence (frames in parallel) and keeps the
/// traces.
pub fn l2r_pipeline_detailed(
    sequence: &[LidarFrame],
    gmm: &Gmm1D,
    config: &SamplingConfig,
    flow: &dyn FlowEstimator,
) -> Result<Vec<FrameOutcome>> {
    config.validate()?;
    gmm.validate().map_err(|e| L2rError::Config(e.to_string()))?;
    if sequence.len() < 2 {
        return Err(L2rError::SequenceTooShort(sequence.len()));
    }
    crate::pointcloud::validate_sequence(sequence).map_err(|e| L2rError::Config(e.to_string()))?;
    (0..sequence.len())
        .into_par_iter()
        .map(|i| {
            sample_frame(&sequence[i], sequence.get(i + 1), i as u64, gmm, config, flow).map_err(
                |e| L2rError::Frame {
                    frame_id: sequence[i].frame_id.clone(),
                    source: Box::new(e),
                },
            )
        })
        .collect()
}

/// Converts a LiDAR sequence into a pseudo-radar sequence, one output frame
/// per input frame.
pub fn l2r_pipeline(
    sequence: &[LidarFrame],
    gmm: &Gmm1D,
    config: &SamplingConfig,
    flow: &dyn FlowEstimator,
) -> Result<PipelineOutput> {
    let outcomes = l2r_pipeline_detailed(sequence, gmm, config, flow)?;
    let (frames, reports) = outcomes.into_iter().map(|o| (o.frame, o.report)).unzip();
    Ok(PipelineOutput { frames, reports })
}
