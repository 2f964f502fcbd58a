use super::{Result, Tape, Tensor, TensorError, Var};

/// Absolute floor in the relative-error denominator. With a 1e-5 step the
/// central difference carries roundoff near 1e-11 * |f|, so gradients much
/// smaller than this floor are judged by absolute rather than relative error.
pub const GRADCHECK_EPS: f64 = 1e-4;

/// Max over coordinates of `|a - n| / (|a| + |n| + GRADCHECK_EPS)`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + GRADCHECK_EPS))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of the scalar function `f` at `x` with central
/// differences of step `h`; returns the max relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    finite_diff_check_multi(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        h,
    )
}

/// Multi-input form of [`finite_diff_check`]: every input is a tracked leaf
/// and every coordinate of every input is perturbed.
pub fn finite_diff_check_multi<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &leaves)?;
    tape.backward(loss)?;
    let mut analytic = Vec::new();
    for (leaf, input) in leaves.iter().zip(inputs) {
        match tape.grad(*leaf) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, input.len())),
        }
    }

    let eval = |point: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value();
        v.item()
            .ok_or_else(|| TensorError::NonScalarLoss(v.shape().to_vec()))
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut point = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            point[k].data_mut()[i] = x0 + h;
            let fp = eval(&point)?;
            point[k].data_mut()[i] = x0 - h;
            let fm = eval(&point)?;
            point[k].data_mut()[i] = x0;
            numeric.push((fp - fm) / (2.0 * h));
        }
    }
    Ok(compare_gradients(&analytic, &numeric))
}
