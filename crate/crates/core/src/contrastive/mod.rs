//! Contrastive losses between radar and image feature maps.
//!
//! Two stages:
//!
//! - **local**: columns of a radar map are matched to nearby columns of the
//!   image map ([`sliding_window_match`]), both sides are refined by
//!   bidirectional channel/spatial attention ([`bcsa`]), and the pairs are
//!   scored with [`info_nce`];
//! - **global**: each pair of maps is collapsed to two `C`-vectors by shared
//!   row and column attention ([`aggregate_global`]), and six modality/view
//!   pairs are scored across the batch ([`global_loss`]).
//!
//! The total is `λ·L_global + L_col`. Every loss has a `*_var` form that runs
//! on a caller-supplied [`Tape`] (for training and gradient checks) and a
//! plain form taking [`Tensor`]s.

mod attention;
mod global;
mod gradcheck;
mod matching;
mod train;


use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use attention::{bcsa, bcsa_var, scaled_attention, BcsaParams, BcsaVars};
pub use global::{
    aggregate_global, aggregate_global_var, global_loss, global_loss_var, GlobalAggParams,
    GlobalAggVars, GlobalOutput, GlobalLossOutput, GLOBAL_PAIRS,
};
pub use gradcheck::{run_gradcheck, GradcheckEntry, GRADCHECK_COMPONENTS, GRADCHECK_TOLERANCE};
pub use matching::{
    candidate_windows, match_window_var, sliding_window_match, VarMatch, Window, WindowMatch,
};
pub use train::{toy_pretrain, StepLoss, TrainTrace};

/// Added to vector norms before dividing.
pub const NORM_EPS: f64 = 1e-12;
/// Variance floor inside layer norms.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid contrastive config: {0}")]
    Config(String),
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("missing {modality} {view} feature map")]
    MissingMap { modality: Modality, view: View },
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
}

pub type Result<T> = std::result::Result<T, ContrastiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Radar,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Bev,
    Fv,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Radar => "radar",
            Modality::Image => "image",
        })
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            View::Bev => "bev",
            View::Fv => "fv",
        })
    }
}

/// A `C×H×W` feature map tagged with its source.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub modality: Modality,
    pub view: View,
}

impl FeatureMap {
    pub fn new(tensor: Tensor, modality: Modality, view: View) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(TensorError::Rank {
                op: "FeatureMap",
                expected: "3 (C×H×W)",
                shape: tensor.shape().to_vec(),
            }
            .into());
        }
        if !tensor.is_finite() {
            return Err(ContrastiveError::Config(format!(
                "{modality} {view} map has non-finite values"
            )));
        }
        Ok(Self {
            tensor,
            modality,
            view,
        })
    }

    /// `(C, H, W)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.tensor.shape();
        (s[0], s[1], s[2])
    }
}

/// The four maps of one scene, all of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMaps {
    pub img_bev: Tensor,
    pub img_fv: Tensor,
    pub rad_bev: Tensor,
    pub rad_fv: Tensor,
}

impl SceneMaps {
    /// Collects one map per (modality, view); a missing one is named in the
    /// error.
    pub fn from_maps(maps: Vec<FeatureMap>) -> Result<Self> {
        let take = |m: Modality, v: View| {
            maps.iter()
                .find(|f| f.modality == m && f.view == v)
                .map(|f| f.tensor.clone())
                .ok_or(ContrastiveError::MissingMap { modality: m, view: v })
        };
        let scene = Self {
            img_bev: take(Modality::Image, View::Bev)?,
            img_fv: take(Modality::Image, View::Fv)?,
            rad_bev: take(Modality::Radar, View::Bev)?,
            rad_fv: take(Modality::Radar, View::Fv)?,
        };
        scene.check()?;
        Ok(scene)
    }

    pub fn get(&self, modality: Modality, view: View) -> &Tensor {
        match (modality, view) {
            (Modality::Image, View::Bev) => &self.img_bev,
            (Modality::Image, View::Fv) => &self.img_fv,
            (Modality::Radar, View::Bev) => &self.rad_bev,
            (Modality::Radar, View::Fv) => &self.rad_fv,
        }
    }

    pub fn feature_maps(&self) -> Vec<FeatureMap> {
        [
            (Modality::Image, View::Bev),
            (Modality::Image, View::Fv),
            (Modality::Radar, View::Bev),
            (Modality::Radar, View::Fv),
        ]
        .into_iter()
        .map(|(m, v)| FeatureMap {
            tensor: self.get(m, v).clone(),
            modality: m,
            view: v,
        })
        .collect()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.img_bev.shape();
        (s[0], s[1], s[2])
    }

    fn check(&self) -> Result<()> {
        let base = self.img_bev.shape();
        for t in [&self.img_fv, &self.rad_bev, &self.rad_fv, &self.img_bev] {
            if t.rank() != 3 || t.shape() != base {
                return Err(ContrastiveError::Shape {
                    op: "SceneMaps",
                    lhs: base.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> SceneVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        SceneVars {
            img_bev: put(&self.img_bev),
            img_fv: put(&self.img_fv),
            rad_bev: put(&self.rad_bev),
            rad_fv: put(&self.rad_fv),
        }
    }
}

/// A scene's maps on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SceneVars<'t> {
    pub img_bev: Var<'t>,
    pub img_fv: Var<'t>,
    pub rad_bev: Var<'t>,
    pub rad_fv: Var<'t>,
}

impl<'t> SceneVars<'t> {
    pub fn get(&self, modality: Modality, view: View) -> Var<'t> {
        match (modality, view) {
            (Modality::Image, View::Bev) => self.img_bev,
            (Modality::Image, View::Fv) => self.img_fv,
            (Modality::Radar, View::Bev) => self.rad_bev,
            (Modality::Radar, View::Fv) => self.rad_fv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Width of the column search area around an anchor.
    pub search_width: usize,
    /// Width of each candidate window.
    pub window: usize,
    /// Columns drawn per scene for the local loss.
    pub n_columns: usize,
    pub lambda_global: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            search_width: 5,
            window: 3,
            n_columns: 8,
            lambda_global: 1.0 / 6.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ContrastiveError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.window == 0 || self.window >= self.search_width {
            return Err(ContrastiveError::Config(format!(
                "need 1 <= window < search_width, got window {} search_width {}",
                self.window, self.search_width
            )));
        }
        if self.n_columns < 2 {
            return Err(ContrastiveError::Config(format!(
                "n_columns must be >= 2, got {}",
                self.n_columns
            )));
        }
        if !(self.lambda_global >= 0.0 && self.lambda_global.is_finite()) {
            return Err(ContrastiveError::Config(format!(
                "lambda_global must be finite and >= 0, got {}",
                self.lambda_global
            )));
        }
        Ok(())
    }
}

/// InfoNCE over `N` anchor/candidate rows (`N×K` each). Row `i` of the
/// candidates is the positive for anchor `i`; the other rows are negatives.
/// Similarity is cosine, divided by `tau`.
pub fn info_nce_var<'t>(anchors: Var<'t>, candidates: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let (sa, sc) = (anchors.shape(), candidates.shape());
    if sa.len() != 2 || sa != sc {
        return Err(ContrastiveError::Shape {
            op: "info_nce",
            lhs: sa,
            rhs: sc,
        });
    }
    if !(tau > 0.0) {
        return Err(ContrastiveError::Config(format!("tau must be > 0, got {tau}")));
    }
    let n = sa[0];
    let a = anchors.l2_normalize(1, NORM_EPS)?;
    let c = candidates.l2_normalize(1, NORM_EPS)?;
    let log_p = a.matmul(c.transpose_last2()?)?.scale(1.0 / tau).log_softmax(1)?;
    let eye = anchors.tape().constant(Tensor::eye(n));
    Ok(log_p.mul(eye)?.sum().scale(-1.0 / n as f64))
}

pub fn info_nce(anchors: &Tensor, candidates: &Tensor, tau: f64) -> Result<f64> {
    let tape = Tape::new();
    let loss = info_nce_var(tape.constant(anchors.clone()), tape.constant(candidates.clone()), tau)?;
    Ok(loss.item())
}

/// Row-wise cosine similarity matrix of two `N×K` tensors.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let na = tape.constant(a.clone()).l2_normalize(1, NORM_EPS)?;
    let nb = tape.constant(b.clone()).l2_normalize(1, NORM_EPS)?;
    Ok(na.matmul(nb.transpose_last2()?)?.value())
}

/// `n` distinct columns out of `0..width`, uniformly.
pub fn select_columns<R: Rng + ?Sized>(width: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > width {
        return Err(ContrastiveError::Config(format!(
            "cannot draw {n} columns from a map of width {width}"
        )));
    }
    Ok(rand::seq::index::sample(rng, width, n).into_vec())
}

/// Output of the local loss on a tape.
pub struct LocalOutput<'t> {
    pub loss: Var<'t>,
    pub columns: Vec<usize>,
    /// Matched offset per column.
    pub offsets: Vec<i64>,
    /// `N×N` cosine similarities of the refined pairs (values only).
    pub similarity: Tensor,
}

/// Local column loss for one scene: radar columns are anchors, the image map
/// supplies the matched candidates.
pub fn local_loss_var<'t>(
    radar: Var<'t>,
    image: Var<'t>,
    columns: &[usize],
    config: &ContrastiveConfig,
    params: &BcsaVars<'t>,
) -> Result<LocalOutput<'t>> {
    let (sr, si) = (radar.shape(), image.shape());
    if sr.len() != 3 || sr != si {
        return Err(ContrastiveError::Shape {
            op: "local_loss",
            lhs: sr,
            rhs: si,
        });
    }
    let (c, h, w) = (sr[0], sr[1], sr[2]);
    if columns.is_empty() || columns.iter().any(|&j| j >= w) {
        return Err(ContrastiveError::Config(format!(
            "columns {columns:?} invalid for width {w}"
        )));
    }
    let mut anchors = Vec::with_capacity(columns.len());
    let mut candidates = Vec::with_capacity(columns.len());
    let mut offsets = Vec::with_capacity(columns.len());
    for &j in columns {
        let anchor = radar.slice(2, j, 1)?.reshape(&[c, h])?;
        let m = match_window_var(anchor, image, j, config.search_width, config.window)?;
        offsets.push(m.window.offset);
        let (ra, rc) = bcsa_var(anchor, m.aggregate, params)?;
        anchors.push(ra.reshape(&[1, c * h])?);
        candidates.push(rc.reshape(&[1, c * h])?);
    }
    let a = Var::concat(&anchors, 0)?;
    let b = Var::concat(&candidates, 0)?;
    let similarity = cosine_matrix(&a.value(), &b.value())?;
    Ok(LocalOutput {
        loss: info_nce_var(a, b, config.tau)?,
        columns: columns.to_vec(),
        offsets,
        similarity,
    })
}

pub fn local_loss<R: Rng + ?Sized>(
    radar: &FeatureMap,
    image: &FeatureMap,
    config: &ContrastiveConfig,
    params: &BcsaParams,
    rng: &mut R,
) -> Result<f64> {
    config.validate()?;
    if radar.modality != Modality::Radar || image.modality != Modality::Image {
        return Err(ContrastiveError::Config(format!(
            "local_loss expects (radar, image) maps, got ({}, {})",
            radar.modality, image.modality
        )));
    }
    let (_, _, w) = radar.dims();
    let columns = select_columns(w, config.n_columns, rng)?;
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let out = local_loss_var(
        tape.constant(radar.tensor.clone()),
        tape.constant(image.tensor.clone()),
        &columns,
        config,
        &p,
    )?;
    Ok(out.loss.item())
}

/// All learnable parameters of the loss stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub bcsa: BcsaParams,
    pub agg: GlobalAggParams,
}

impl ModelParams {
    pub fn init(channels: usize, seed: u64) -> Self {
        Self {
            bcsa: BcsaParams::new(channels),
            agg: GlobalAggParams::init(channels, seed),
        }
    }
}

/// Pieces of the total loss on a tape.
pub struct TotalOutput<'t> {
    pub total: Var<'t>,
    pub local: Var<'t>,
    pub global: GlobalLossOutput<'t>,
    /// One per scene.
    pub local_similarity: Vec<Tensor>,
}

/// `λ·L_global + L_col`, where `L_col` is the BEV local loss averaged over
/// scenes. `columns[b]` are the columns drawn for scene `b`.
pub fn total_loss_var<'t>(
    scenes: &[SceneVars<'t>],
    columns: &[Vec<usize>],
    config: &ContrastiveConfig,
    bcsa: &BcsaVars<'t>,
    agg: &GlobalAggVars<'t>,
) -> Result<TotalOutput<'t>> {
    if columns.len() != scenes.len() {
        return Err(ContrastiveError::Config(format!(
            "{} column sets for {} scenes",
            columns.len(),
            scenes.len()
        )));
    }
    let global = global_loss_var(scenes, config, agg)?;
    let mut locals = Vec::with_capacity(scenes.len());
    let mut local_similarity = Vec::with_capacity(scenes.len());
    for (s, cols) in scenes.iter().zip(columns) {
        let out = local_loss_var(s.rad_bev, s.img_bev, cols, config, bcsa)?;
        locals.push(out.loss.reshape(&[1])?);
        local_similarity.push(out.similarity);
    }
    let local = Var::concat(&locals, 0)?.mean();
    let total = global.total.scale(config.lambda_global).add(local)?;
    Ok(TotalOutput {
        total,
        local,
        global,
        local_similarity,
    })
}

/// Scalar values of the total loss and its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub local: f64,
    pub global: f64,
    /// `(pair name, loss)` for each of the six global pairs.
    pub pairs: Vec<(String, f64)>,
}

/// Draws `n_columns` per scene from `rng` (scene order), then evaluates
/// [`total_loss_var`].
pub fn total_loss<R: Rng + ?Sized>(
    scenes: &[SceneMaps],
    config: &ContrastiveConfig,
    params: &ModelParams,
    rng: &mut R,
) -> Result<LossBreakdown> {
    config.validate()?;
    let columns = draw_columns(scenes, config, rng)?;
    let tape = Tape::new();
    let vars: Vec<SceneVars<'_>> = scenes.iter().map(|s| s.bind(&tape, false)).collect();
    let out = total_loss_var(
        &vars,
        &columns,
        config,
        &params.bcsa.bind(&tape, false),
        &params.agg.bind(&tape, false),
    )?;
    Ok(LossBreakdown {
        total: out.total.item(),
        local: out.local.item(),
        global: out.global.total.item(),
        pairs: out
            .global
            .pairs
            .iter()
            .map(|(name, v)| (name.to_string(), v.item()))
            .collect(),
    })
}

pub(crate) fn draw_columns<R: Rng + ?Sized>(
    scenes: &[SceneMaps],
    config: &ContrastiveConfig,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    scenes
        .iter()
        .map(|s| select_columns(s.dims().2, config.n_columns, rng))
        .collect()
}

/// Tensor of i.i.d. `N(0, sigma²)` entries from a seeded generator.
pub fn gaussian_tensor(shape: &[usize], sigma: f64, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    gaussian_tensor_from(shape, sigma, &mut rng)
}

pub fn gaussian_tensor_from<R: Rng + ?Sized>(shape: &[usize], sigma: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and >= 0");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
