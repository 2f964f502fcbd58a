//! Plain gradient descent on the full loss stack over a fixed batch.

use serde::{Deserialize, Serialize};

use super::{
    draw_columns, total_loss_var, ContrastiveConfig, ContrastiveError, ModelParams, Result,
    SceneMaps, SceneVars,
};
use crate::rng::seeded;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Entry `k` is the total loss after `k` updates (`steps + 1` entries).
    pub steps: Vec<StepLoss>,
    /// Mean cosine similarity of positive local pairs after training.
    pub final_pos_sim: f64,
    /// Mean cosine similarity of negative local pairs after training.
    pub final_neg_sim: f64,
    pub seed: u64,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.steps.first().map_or(f64::NAN, |s| s.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.loss)
    }

    pub fn similarity_gap(&self) -> f64 {
        self.final_pos_sim - self.final_neg_sim
    }
}

fn pos_neg(sims: &[Tensor]) -> (f64, f64) {
    let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0usize, 0usize);
    for s in sims {
        let n = s.shape()[0];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    pos += s.at(&[i, j]);
                    np += 1;
                } else {
                    neg += s.at(&[i, j]);
                    nn += 1;
                }
            }
        }
    }
    (pos / np.max(1) as f64, neg / nn.max(1) as f64)
}

fn descend(t: &mut Tensor, grad: Option<Tensor>, lr: f64) {
    if let Some(g) = grad {
        t.data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(x, d)| *x -= lr * d);
    }
}

/// Runs `steps` updates of `θ ← θ − lr·∇L` on the BCSA and aggregation
/// parameters and, with `learn_maps`, on the feature maps themselves. Local
/// columns are drawn once from `seed`, so the objective is fixed.
pub fn toy_pretrain(
    batch: &[SceneMaps],
    config: &ContrastiveConfig,
    steps: usize,
    learning_rate: f64,
    seed: u64,
    learn_maps: bool,
) -> Result<TrainTrace> {
    config.validate()?;
    if steps == 0 {
        return Err(ContrastiveError::Config("steps must be >= 1".into()));
    }
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(ContrastiveError::Config(format!("learning rate {learning_rate}")));
    }
    let first = batch
        .first()
        .ok_or_else(|| ContrastiveError::Config("empty batch".into()))?;
    let mut params = ModelParams::init(first.dims().0, seed);
    let mut maps = batch.to_vec();
    let columns = draw_columns(&maps, config, &mut seeded(seed))?;

    let mut trace = Vec::with_capacity(steps + 1);
    let mut sims = Vec::new();
    for step in 0..=steps {
        let tape = Tape::new();
        let scene_vars: Vec<SceneVars<'_>> = maps.iter().map(|s| s.bind(&tape, learn_maps)).collect();
        let bcsa = params.bcsa.bind(&tape, true);
        let agg = params.agg.bind(&tape, true);
        let out = total_loss_var(&scene_vars, &columns, config, &bcsa, &agg)?;
        let loss = out.total.item();
        if !loss.is_finite() {
            return Err(ContrastiveError::Divergence { step });
        }
        trace.push(StepLoss { step, loss });
        if step == steps {
            sims = out.local_similarity;
            break;
        }
        tape.backward(out.total)?;

        for (t, v) in params.bcsa.tensors_mut().into_iter().zip(bcsa.to_vec()) {
            descend(t, tape.grad(v), learning_rate);
        }
        for (t, v) in params.agg.tensors_mut().into_iter().zip([agg.row_proj, agg.col_proj]) {
            descend(t, tape.grad(v), learning_rate);
        }
        if learn_maps {
            for (scene, vars) in maps.iter_mut().zip(&scene_vars) {
                descend(&mut scene.img_bev, tape.grad(vars.img_bev), learning_rate);
                descend(&mut scene.img_fv, tape.grad(vars.img_fv), learning_rate);
                descend(&mut scene.rad_bev, tape.grad(vars.rad_bev), learning_rate);
                descend(&mut scene.rad_fv, tape.grad(vars.rad_fv), learning_rate);
            }
        }
    }
    let (final_pos_sim, final_neg_sim) = pos_neg(&sims);
    Ok(TrainTrace {
        steps: trace,
        final_pos_sim,
        final_neg_sim,
        seed,
    })
}
