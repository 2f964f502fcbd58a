//! Flat TOML run configuration. Every key is optional; command-line flags win
//! over file values.

use std::path::{Path, PathBuf};

use anyhow::Context;
use pseudoradar::contrastive::ContrastiveConfig;
use pseudoradar::l2r::{SamplingConfig, WeightAblation};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for the command's random stream.
    pub seed: u64,

    // sampling
    pub alpha_int: f64,
    pub alpha_dist: f64,
    pub alpha_spa: f64,
    /// Stage-1 radius, meters.
    pub center_radius: f64,
    /// Thinning distance, meters.
    pub d_threshold: f64,
    pub neighbor_count: usize,
    /// Squared-range offset of the distance weight, m².
    pub dist_epsilon: f64,
    pub ablate_weights: WeightAblation,

    // contrastive
    pub tau: f64,
    pub search_width: usize,
    pub window: usize,
    pub n_columns: usize,
    pub lambda_global: f64,

    // paths
    pub input: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        let c = ContrastiveConfig::default();
        Self {
            seed: s.seed,
            alpha_int: s.alpha_int,
            alpha_dist: s.alpha_dist,
            alpha_spa: s.alpha_spa,
            center_radius: s.center_radius,
            d_threshold: s.d_threshold,
            neighbor_count: s.neighbor_count,
            dist_epsilon: s.dist_epsilon,
            ablate_weights: WeightAblation::None,
            tau: c.tau,
            search_width: c.search_width,
            window: c.window,
            n_columns: c.n_columns,
            lambda_global: c.lambda_global,
            input: None,
            gmm: None,
            out: None,
            corpus: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Sampler settings with the ablation applied.
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            alpha_int: self.alpha_int,
            alpha_dist: self.alpha_dist,
            alpha_spa: self.alpha_spa,
            center_radius: self.center_radius,
            d_threshold: self.d_threshold,
            neighbor_count: self.neighbor_count,
            dist_epsilon: self.dist_epsilon,
            seed: self.seed,
        }
        .ablated(self.ablate_weights)
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            search_width: self.search_width,
            window: self.window,
            n_columns: self.n_columns,
            lambda_global: self.lambda_global,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sampling(), SamplingConfig::default());
        assert_eq!(c.contrastive(), ContrastiveConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = toml::from_str::<RunConfig>("alpha_intt = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("alpha_intt"));
    }

    #[test]
    fn ablation_zeroes_other_alphas() {
        let c: RunConfig = toml::from_str("ablate_weights = \"dist\"\nseed = 9\n").unwrap();
        let s = c.sampling();
        assert_eq!((s.alpha_int, s.alpha_dist, s.alpha_spa, s.seed), (0.0, 4.0, 0.0, 9));
    }
}
