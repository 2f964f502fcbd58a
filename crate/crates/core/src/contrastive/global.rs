//! Global aggregation and the six-pair global loss.

use super::{
    gaussian_tensor, info_nce_var, ContrastiveConfig, ContrastiveError, Modality, Result,
    SceneVars, View,
};
use crate::tensor::{Tape, Tensor, Var};

/// Standard deviation of the seeded projection initialisation.
pub const INIT_SIGMA: f64 = 0.02;

/// Row and column score projections over the concatenated `2C` channels,
/// each stored as `1×2C`. One set is shared by all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAggParams {
    pub row_proj: Tensor,
    pub col_proj: Tensor,
}

impl GlobalAggParams {
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = crate::rng::seeded(seed);
        Self {
            row_proj: super::gaussian_tensor_from(&[1, 2 * channels], INIT_SIGMA, &mut rng),
            col_proj: super::gaussian_tensor_from(&[1, 2 * channels], INIT_SIGMA, &mut rng),
        }
    }

    /// Zero projections: uniform row and column attention.
    pub fn zeros(channels: usize) -> Self {
        Self {
            row_proj: Tensor::zeros(&[1, 2 * channels]),
            col_proj: Tensor::zeros(&[1, 2 * channels]),
        }
    }

    /// Gaussian projections with a chosen spread.
    pub fn random(channels: usize, sigma: f64, seed: u64) -> Self {
        Self {
            row_proj: gaussian_tensor(&[1, 2 * channels], sigma, seed),
            col_proj: gaussian_tensor(&[1, 2 * channels], sigma, seed.wrapping_add(1)),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.row_proj, &mut self.col_proj]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> GlobalAggVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        GlobalAggVars {
            row_proj: put(&self.row_proj),
            col_proj: put(&self.col_proj),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GlobalAggVars<'t> {
    pub row_proj: Var<'t>,
    pub col_proj: Var<'t>,
}

pub struct GlobalOutput<'t> {
    /// `[C]`
    pub g_a: Var<'t>,
    pub g_b: Var<'t>,
    /// `1×H`, sums to 1.
    pub row_weights: Var<'t>,
    /// `1×W`, sums to 1.
    pub col_weights: Var<'t>,
}

/// Collapses `C×H×W` by a weighted row sum to `C×W`.
fn weighted_rows<'t>(f: Var<'t>, rows: Var<'t>) -> Result<Var<'t>> {
    let s = f.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Ok(f.transpose_last2()?
        .reshape(&[c * w, h])?
        .matmul(rows.reshape(&[h, 1])?)?
        .reshape(&[c, w])?)
}

/// Shared row then column attention over a pair of maps; returns one
/// `C`-vector per map.
pub fn aggregate_global_var<'t>(fa: Var<'t>, fb: Var<'t>, p: &GlobalAggVars<'t>) -> Result<GlobalOutput<'t>> {
    let (sa, sb) = (fa.shape(), fb.shape());
    if sa.len() != 3 || sa != sb {
        return Err(ContrastiveError::Shape {
            op: "aggregate_global",
            lhs: sa,
            rhs: sb,
        });
    }
    let (c, w) = (sa[0], sa[2]);
    if p.row_proj.shape() != [1, 2 * c] || p.col_proj.shape() != [1, 2 * c] {
        return Err(ContrastiveError::Shape {
            op: "aggregate_global params",
            lhs: vec![1, 2 * c],
            rhs: p.row_proj.shape(),
        });
    }
    let both = Var::concat(&[fa, fb], 0)?;
    let row_weights = p.row_proj.matmul(both.mean_axis(2)?)?.softmax(1)?;
    let (ra, rb) = (weighted_rows(fa, row_weights)?, weighted_rows(fb, row_weights)?);
    let col_weights = p
        .col_proj
        .matmul(Var::concat(&[ra, rb], 0)?)?
        .softmax(1)?;
    let col_t = col_weights.reshape(&[w, 1])?;
    Ok(GlobalOutput {
        g_a: ra.matmul(col_t)?.reshape(&[c])?,
        g_b: rb.matmul(col_t)?.reshape(&[c])?,
        row_weights,
        col_weights,
    })
}

pub fn aggregate_global(fa: &Tensor, fb: &Tensor, params: &GlobalAggParams) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let out = aggregate_global_var(
        tape.constant(fa.clone()),
        tape.constant(fb.clone()),
        &params.bind(&tape, false),
    )?;
    Ok((out.g_a.value(), out.g_b.value()))
}

type MapKey = (Modality, View);

/// The six map pairs scored by the global loss.
pub const GLOBAL_PAIRS: [(MapKey, MapKey); 6] = [
    ((Modality::Image, View::Bev), (Modality::Image, View::Fv)),
    ((Modality::Image, View::Bev), (Modality::Radar, View::Fv)),
    ((Modality::Image, View::Bev), (Modality::Radar, View::Bev)),
    ((Modality::Image, View::Fv), (Modality::Radar, View::Bev)),
    ((Modality::Image, View::Fv), (Modality::Radar, View::Fv)),
    ((Modality::Radar, View::Bev), (Modality::Radar, View::Fv)),
];

pub fn pair_name(pair: &(MapKey, MapKey)) -> String {
    let ((ma, va), (mb, vb)) = pair;
    format!("{ma}_{va}~{mb}_{vb}")
}

pub struct GlobalLossOutput<'t> {
    /// Sum of the pair losses.
    pub total: Var<'t>,
    pub pairs: Vec<(String, Var<'t>)>,
}

/// For each pair, every scene yields two global vectors; scenes are the
/// batch of an InfoNCE whose positives are same-scene vectors.
pub fn global_loss_var<'t>(
    scenes: &[SceneVars<'t>],
    config: &ContrastiveConfig,
    params: &GlobalAggVars<'t>,
) -> Result<GlobalLossOutput<'t>> {
    if scenes.len() < 2 {
        return Err(ContrastiveError::Config(format!(
            "global loss needs a batch of at least 2 scenes, got {}",
            scenes.len()
        )));
    }
    let mut pairs = Vec::with_capacity(GLOBAL_PAIRS.len());
    for pair in &GLOBAL_PAIRS {
        let (ka, kb) = pair;
        let mut ga = Vec::with_capacity(scenes.len());
        let mut gb = Vec::with_capacity(scenes.len());
        for s in scenes {
            let out = aggregate_global_var(s.get(ka.0, ka.1), s.get(kb.0, kb.1), params)?;
            let c = out.g_a.shape()[0];
            ga.push(out.g_a.reshape(&[1, c])?);
            gb.push(out.g_b.reshape(&[1, c])?);
        }
        let loss = info_nce_var(Var::concat(&ga, 0)?, Var::concat(&gb, 0)?, config.tau)?;
        pairs.push((pair_name(pair), loss));
    }
    let mut total = pairs[0].1;
    for (_, l) in &pairs[1..] {
        total = total.add(*l)?;
    }
    Ok(GlobalLossOutput { total, pairs })
}

/// Returns the summed loss and the six per-pair terms.
pub fn global_loss(
    scenes: &[super::SceneMaps],
    config: &ContrastiveConfig,
    params: &GlobalAggParams,
) -> Result<(f64, Vec<(String, f64)>)> {
    let tape = Tape::new();
    let vars: Vec<SceneVars<'_>> = scenes.iter().map(|s| s.bind(&tape, false)).collect();
    let out = global_loss_var(&vars, config, &params.bind(&tape, false))?;
    Ok((
        out.total.item(),
        out.pairs.iter().map(|(n, v)| (n.clone(), v.item())).collect(),
    ))
}
