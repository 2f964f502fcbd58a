//! Bidirectional channel/spatial attention (BCSA).
//!
//! For a pair of `C×D` features, `F_i` attends to `F_{3-i}` twice:
//!
//! - channel branch: `MAT(F_i, F_j, F_j)`, channels as the sequence, scale `1/√D`;
//! - spatial branch: `MAT(F_iᵀ, F_jᵀ, F_jᵀ)ᵀ`, positions as the sequence, scale `1/√C`.
//!
//! Each branch is layer-normed over channels with its own affine parameters,
//! and a per-channel sigmoid gate blends them: `g⊙b₁ + (1−g)⊙b₂`.

use super::{ContrastiveError, Result, LN_EPS};
use crate::tensor::{Tape, Tensor, Var};

/// `softmax(QKᵀ/√d_k)V` with `d_k` the width of `Q`. Returns the output and
/// the attention matrix (rows sum to 1).
pub fn scaled_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let d_k = q.shape()[1] as f64;
    let weights = q
        .matmul(k.transpose_last2()?)?
        .scale(1.0 / d_k.sqrt())
        .softmax(1)?;
    Ok((weights.matmul(v)?, weights))
}

/// Per-channel parameters, each stored as `C×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BcsaParams {
    pub channel_gamma: Tensor,
    pub channel_beta: Tensor,
    pub spatial_gamma: Tensor,
    pub spatial_beta: Tensor,
    /// Gate logits; the gate is their sigmoid.
    pub gate: Tensor,
}

impl BcsaParams {
    /// Identity affine maps and an even gate.
    pub fn new(channels: usize) -> Self {
        let col = |v: f64| Tensor::filled(&[channels, 1], v);
        Self {
            channel_gamma: col(1.0),
            channel_beta: col(0.0),
            spatial_gamma: col(1.0),
            spatial_beta: col(0.0),
            gate: col(0.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gate.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.channel_gamma,
            &self.channel_beta,
            &self.spatial_gamma,
            &self.spatial_beta,
            &self.gate,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.channel_gamma,
            &mut self.channel_beta,
            &mut self.spatial_gamma,
            &mut self.spatial_beta,
            &mut self.gate,
        ]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BcsaVars<'t> {
        let v: Vec<Var<'t>> = self
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BcsaVars::from_slice(&v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BcsaVars<'t> {
    pub channel_gamma: Var<'t>,
    pub channel_beta: Var<'t>,
    pub spatial_gamma: Var<'t>,
    pub spatial_beta: Var<'t>,
    pub gate: Var<'t>,
}

impl<'t> BcsaVars<'t> {
    /// From five vars in [`BcsaParams::tensors`] order.
    pub fn from_slice(v: &[Var<'t>]) -> Self {
        Self {
            channel_gamma: v[0],
            channel_beta: v[1],
            spatial_gamma: v[2],
            spatial_beta: v[3],
            gate: v[4],
        }
    }

    pub fn to_vec(&self) -> Vec<Var<'t>> {
        vec![
            self.channel_gamma,
            self.channel_beta,
            self.spatial_gamma,
            self.spatial_beta,
            self.gate,
        ]
    }
}

fn affine_ln<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
    let shape = x.shape();
    Ok(x.layer_norm(0, LN_EPS)?
        .mul(gamma.broadcast_to(&shape)?)?
        .add(beta.broadcast_to(&shape)?)?)
}

fn refine<'t>(fi: Var<'t>, fj: Var<'t>, p: &BcsaVars<'t>) -> Result<Var<'t>> {
    let shape = fi.shape();
    let (channel, _) = scaled_attention(fi, fj, fj)?;
    let (ti, tj) = (fi.transpose_last2()?, fj.transpose_last2()?);
    let (spatial, _) = scaled_attention(ti, tj, tj)?;
    let b1 = affine_ln(channel, p.channel_gamma, p.channel_beta)?;
    let b2 = affine_ln(spatial.transpose_last2()?, p.spatial_gamma, p.spatial_beta)?;
    let g = p.gate.sigmoid().broadcast_to(&shape)?;
    Ok(g.mul(b1)?.add(g.one_minus().mul(b2)?)?)
}

/// Refines both features against each other; outputs keep the `C×D` shape.
pub fn bcsa_var<'t>(f1: Var<'t>, f2: Var<'t>, params: &BcsaVars<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let (s1, s2) = (f1.shape(), f2.shape());
    if s1.len() != 2 || s1 != s2 {
        return Err(ContrastiveError::Shape {
            op: "bcsa",
            lhs: s1,
            rhs: s2,
        });
    }
    let pshape = params.gate.shape();
    if pshape != [s1[0], 1] {
        return Err(ContrastiveError::Shape {
            op: "bcsa params",
            lhs: s1,
            rhs: pshape,
        });
    }
    Ok((refine(f1, f2, params)?, refine(f2, f1, params)?))
}

pub fn bcsa(f1: &Tensor, f2: &Tensor, params: &BcsaParams) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let (a, b) = bcsa_var(tape.constant(f1.clone()), tape.constant(f2.clone()), &p)?;
    Ok((a.value(), b.value()))
}
