//! Finite-difference checks of every loss component on seeded random
//! instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    bcsa_var, aggregate_global_var, global_loss_var, info_nce_var, local_loss_var,
    select_columns, total_loss_var, BcsaParams, BcsaVars, ContrastiveConfig, GlobalAggVars,
    Result, SceneVars, gaussian_tensor_from,
};
use crate::rng::seeded;
use crate::tensor::{finite_diff_check_multi, Tape, Tensor, TensorError, Var};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_STEP: f64 = 1e-5;

pub const GRADCHECK_COMPONENTS: [&str; 6] = [
    "info_nce",
    "bcsa",
    "local_loss",
    "aggregate_global",
    "global_loss",
    "total_loss",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub component: String,
    pub max_rel_error: f64,
    pub inputs: usize,
    pub passed: bool,
}

fn lift<T>(r: Result<T>) -> crate::tensor::Result<T> {
    r.map_err(|e| TensorError::Contract(e.to_string()))
}

/// Scalar readout `Σ w ⊙ x` with fixed weights, so every output coordinate
/// matters.
fn readout<'t>(x: Var<'t>, salt: f64) -> crate::tensor::Result<Var<'t>> {
    let n = x.value().len();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.731 + salt).sin()).collect();
    let w = x.tape().constant(Tensor::new(x.shape(), w)?);
    x.dot(w)
}

fn random_bcsa<R: Rng>(c: usize, rng: &mut R) -> Vec<Tensor> {
    let mut p = BcsaParams::new(c);
    for (k, t) in p.tensors_mut().into_iter().enumerate() {
        let noise = gaussian_tensor_from(&[c, 1], 0.3, rng);
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += if k == 4 { 3.0 * n } else { *n };
        }
    }
    p.tensors().into_iter().cloned().collect()
}

fn run_one<F>(name: &str, f: F, inputs: &[Tensor], corrupt: bool) -> Result<GradcheckEntry>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> crate::tensor::Result<Var<'t>>,
{
    let err = finite_diff_check_multi(
        |tape, v| {
            let loss = f(tape, v)?;
            if !corrupt {
                return Ok(loss);
            }
            // s - detached(s) is exactly zero but has gradient 1 w.r.t. input 0
            let s = v[0].sum();
            loss.add(s.sub(tape.constant(s.value()))?)
        },
        inputs,
        GRADCHECK_STEP,
    )?;
    Ok(GradcheckEntry {
        component: name.to_string(),
        max_rel_error: err,
        inputs: inputs.iter().map(Tensor::len).sum(),
        passed: err < GRADCHECK_TOLERANCE,
    })
}

/// First `4·b` vars as `b` scenes in `SceneMaps` field order.
fn scenes_of<'t>(v: &[Var<'t>], b: usize) -> Vec<SceneVars<'t>> {
    (0..b)
        .map(|s| SceneVars {
            img_bev: v[4 * s],
            img_fv: v[4 * s + 1],
            rad_bev: v[4 * s + 2],
            rad_fv: v[4 * s + 3],
        })
        .collect()
}

/// Checks each component in [`GRADCHECK_COMPONENTS`]. `corrupt` names a
/// component whose analytic gradient is deliberately perturbed, to exercise
/// the failure path.
pub fn run_gradcheck(seed: u64, corrupt: Option<&str>) -> Result<Vec<GradcheckEntry>> {
    let mut rng = seeded(seed);
    let cfg = ContrastiveConfig::default();
    let mut out = Vec::new();
    let is = |name: &str| corrupt == Some(name);

    // info_nce: N = 4, K = 6
    let inputs = vec![
        gaussian_tensor_from(&[4, 6], 1.0, &mut rng),
        gaussian_tensor_from(&[4, 6], 1.0, &mut rng),
    ];
    let tau = cfg.tau;
    out.push(run_one(
        "info_nce",
        move |_, v| lift(info_nce_var(v[0], v[1], tau)),
        &inputs, is("info_nce"))?);

    // bcsa: C = 4, D = 5
    let (c, d) = (4, 5);
    let mut inputs = vec![
        gaussian_tensor_from(&[c, d], 1.0, &mut rng),
        gaussian_tensor_from(&[c, d], 1.0, &mut rng),
    ];
    inputs.extend(random_bcsa(c, &mut rng));
    out.push(run_one(
        "bcsa",
        |_, v| {
            let p = BcsaVars::from_slice(&v[2..7]);
            let (a, b) = lift(bcsa_var(v[0], v[1], &p))?;
            readout(a, 0.0)?.add(readout(b, 1.3)?)
        },
        &inputs, is("bcsa"))?);

    // local_loss: 4×6×8 maps, 4 columns
    let (c, h, w) = (4, 6, 8);
    let mut inputs = vec![
        gaussian_tensor_from(&[c, h, w], 1.0, &mut rng),
        gaussian_tensor_from(&[c, h, w], 1.0, &mut rng),
    ];
    inputs.extend(random_bcsa(c, &mut rng));
    let columns = select_columns(w, 4, &mut rng)?;
    let local_cfg = ContrastiveConfig { n_columns: 4, ..cfg.clone() };
    out.push(run_one(
        "local_loss",
        |_, v| {
            let p = BcsaVars::from_slice(&v[2..7]);
            Ok(lift(local_loss_var(v[0], v[1], &columns, &local_cfg, &p))?.loss)
        },
        &inputs, is("local_loss"))?);

    // aggregate_global: 4×3×3 maps
    let (c, h, w) = (4, 3, 3);
    let inputs = vec![
        gaussian_tensor_from(&[c, h, w], 1.0, &mut rng),
        gaussian_tensor_from(&[c, h, w], 1.0, &mut rng),
        gaussian_tensor_from(&[1, 2 * c], 0.5, &mut rng),
        gaussian_tensor_from(&[1, 2 * c], 0.5, &mut rng),
    ];
    out.push(run_one(
        "aggregate_global",
        |_, v| {
            let p = GlobalAggVars { row_proj: v[2], col_proj: v[3] };
            let o = lift(aggregate_global_var(v[0], v[1], &p))?;
            readout(o.g_a, 0.0)?.add(readout(o.g_b, 2.1)?)
        },
        &inputs, is("aggregate_global"))?);

    // global_loss: B = 2, 4×3×3 maps
    let b = 2;
    let mut inputs: Vec<Tensor> = (0..4 * b)
        .map(|_| gaussian_tensor_from(&[c, h, w], 1.0, &mut rng))
        .collect();
    inputs.push(gaussian_tensor_from(&[1, 2 * c], 0.5, &mut rng));
    inputs.push(gaussian_tensor_from(&[1, 2 * c], 0.5, &mut rng));
    out.push(run_one(
        "global_loss",
        |_, v| {
            let p = GlobalAggVars { row_proj: v[4 * b], col_proj: v[4 * b + 1] };
            Ok(lift(global_loss_var(&scenes_of(v, b), &cfg, &p))?.total)
        },
        &inputs, is("global_loss"))?);

    // total_loss: B = 2, 4×3×4 maps, 2 columns per scene
    let (h, w) = (3, 4);
    let mut inputs: Vec<Tensor> = (0..4 * b)
        .map(|_| gaussian_tensor_from(&[c, h, w], 1.0, &mut rng))
        .collect();
    inputs.push(gaussian_tensor_from(&[1, 2 * c], 0.5, &mut rng));
    inputs.push(gaussian_tensor_from(&[1, 2 * c], 0.5, &mut rng));
    inputs.extend(random_bcsa(c, &mut rng));
    let total_cfg = ContrastiveConfig { n_columns: 2, ..cfg.clone() };
    let columns: Vec<Vec<usize>> = (0..b)
        .map(|_| select_columns(w, 2, &mut rng))
        .collect::<Result<_>>()?;
    out.push(run_one(
        "total_loss",
        |_, v| {
            let agg = GlobalAggVars { row_proj: v[4 * b], col_proj: v[4 * b + 1] };
            let p = BcsaVars::from_slice(&v[4 * b + 2..4 * b + 7]);
            Ok(lift(total_loss_var(&scenes_of(v, b), &columns, &total_cfg, &p, &agg))?.total)
        },
        &inputs, is("total_loss"))?);

    Ok(out)
}
