//! One-dimensional Gaussian mixture over per-frame radar point counts,
//! fitted by expectation-maximization. The fitted model supplies the target
//! point count of every synthesized frame.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_COMPONENTS: usize = 5;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Smallest count `sample_count` returns; both sampling stages need a point.
pub const MIN_SAMPLED_COUNT: u64 = 2;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("need at least {needed} counts for {needed} components, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("counts must be positive; entry {index} is {value}")]
    Domain { index: usize, value: i64 },
    #[error("malformed model JSON: {0}")]
    Parse(String),
    #[error("invalid model: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    #[serde(rename = "var")]
    pub variance: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gmm1D {
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: Gmm1D,
    /// Log-likelihood at initialization, then after every M-step.
    pub log_likelihood_trace: Vec<f64>,
    /// Sum of the M-step weights before renormalization, per iteration.
    pub weight_sum_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Gmm1D {
    /// A single-component model.
    pub fn single(mean: f64, variance: f64) -> Self {
        Self {
            components: vec![Component {
                weight: 1.0,
                mean,
                variance: variance.max(VARIANCE_FLOOR),
            }],
        }
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if self.components.is_empty() {
            return Err(GmmError::Schema("no components".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight >= 0.0 && c.weight <= 1.0) {
                return Err(GmmError::Schema(format!("component {i}: weight {}", c.weight)));
            }
            if !c.mean.is_finite() {
                return Err(GmmError::Schema(format!("component {i}: mean {}", c.mean)));
            }
            if !(c.variance.is_finite() && c.variance > 0.0) {
                return Err(GmmError::Schema(format!("component {i}: var {}", c.variance)));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::Schema(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.components.len()];
        data.iter()
            .map(|&x| {
                for (b, c) in buf.iter_mut().zip(&self.components) {
                    *b = c.weight.ln() + c.log_density(x);
                }
                log_sum_exp(&buf)
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + c.mean * c.mean))
            .sum::<f64>()
            - m * m
    }

    /// Index of a component drawn with probability equal to its weight.
    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// Draws a frame size: a component by weight, a Gaussian value from it,
    /// rounded to the nearest integer and clamped to at least
    /// [`MIN_SAMPLED_COUNT`].
    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let c = &self.components[self.sample_component(rng)];
        let normal = Normal::new(c.mean, c.variance.sqrt()).expect("validated variance");
        let v = normal.sample(rng).round();
        if v.is_finite() && v > MIN_SAMPLED_COUNT as f64 {
            v as u64
        } else {
            MIN_SAMPLED_COUNT
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GmmError> {
        let model: Self = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => GmmError::Schema(e.to_string()),
            _ => GmmError::Parse(e.to_string()),
        })?;
        model.validate()?;
        Ok(model)
    }
}

pub fn save_gmm(model: &Gmm1D, path: &Path) -> Result<(), GmmError> {
    crate::pointcloud::write_atomic(path, model.to_json().as_bytes())?;
    Ok(())
}

pub fn load_gmm(path: &Path) -> Result<Gmm1D, GmmError> {
    Gmm1D::from_json(&fs::read_to_string(path)?)
}

/// k-means++ seeding on scalar data: first center uniform, later centers with
/// probability proportional to squared distance to the nearest chosen one.
fn kmeanspp_centers<R: Rng + ?Sized>(data: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or(data.len() - 1)
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers
}

/// Fits a `k`-component mixture to positive counts by EM.
///
/// Stops when the log-likelihood improves by less than `tol` or after
/// `max_iter` M-steps. Variances never drop below [`VARIANCE_FLOOR`].
pub fn fit_em(
    counts: &[i64],
    k: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<GmmFit, GmmError> {
    if k == 0 {
        return Err(GmmError::NoComponents);
    }
    if let Some((index, &value)) = counts.iter().enumerate().find(|(_, &c)| c <= 0) {
        return Err(GmmError::Domain { index, value });
    }
    if counts.len() < k {
        return Err(GmmError::InsufficientData {
            needed: k,
            got: counts.len(),
        });
    }
    let data: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);

    let mut rng = seeded(seed);
    let mut model = Gmm1D {
        components: kmeanspp_centers(&data, k, &mut rng)
            .into_iter()
            .map(|mean| Component {
                weight: 1.0 / k as f64,
                mean,
                variance: var,
            })
            .collect(),
    };

    let mut trace = vec![model.log_likelihood(&data)];
    let mut resp = vec![0.0; data.len() * k];
    let mut weight_sums = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iter {
        // E-step
        let mut logp = vec![0.0; k];
        for (i, &x) in data.iter().enumerate() {
            for (lp, c) in logp.iter_mut().zip(&model.components) {
                *lp = c.weight.ln() + c.log_density(x);
            }
            let lse = log_sum_exp(&logp);
            for j in 0..k {
                resp[i * k + j] = (logp[j] - lse).exp();
            }
        }
        // M-step
        for (j, comp) in model.components.iter_mut().enumerate() {
            let nk: f64 = (0..data.len()).map(|i| resp[i * k + j]).sum();
            comp.weight = nk / n;
            if nk > 0.0 {
                let mu = data.iter().enumerate().map(|(i, x)| resp[i * k + j] * x).sum::<f64>() / nk;
                let v = data
                    .iter()
                    .enumerate()
                    .map(|(i, x)| resp[i * k + j] * (x - mu).powi(2))
                    .sum::<f64>()
                    / nk;
                comp.mean = mu;
                comp.variance = v.max(VARIANCE_FLOOR);
            }
        }
        let total: f64 = model.components.iter().map(|c| c.weight).sum();
        weight_sums.push(total);
        model.components.iter_mut().for_each(|c| c.weight /= total);

        iterations += 1;
        let ll = model.log_likelihood(&data);
        let prev = *trace.last().expect("non-empty");
        trace.push(ll);
        if ll - prev < tol {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        weight_sum_trace: weight_sums,
        iterations,
        converged,
    })
}
