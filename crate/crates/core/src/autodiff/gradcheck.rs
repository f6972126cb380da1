//! Central finite-difference checks for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Fixed pseudo-random projection weights used to reduce a tensor-valued
/// output to a scalar, so every output coordinate contributes.
fn projection(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| ((i as f64 + 1.0) * 0.754_877_666_246_692_7).fract() + 0.25)
        .collect()
}

fn projected(tape: &mut Tape, out: Var) -> Result<Var> {
    let w = Tensor::new(tape.value(out).shape().to_vec(), projection(tape.value(out).len()))?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest relative error between the tape gradient of `f` at `x` and its
/// central finite-difference estimate with the given `step`.
///
/// `f` must be deterministic (dropout off). Tensor-valued outputs are reduced
/// to a scalar with fixed positive weights.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(point.clone());
        let out = f(&mut tape, xv)?;
        let s = projected(&mut tape, out)?;
        Ok(tape.value(s).data()[0])
    };

    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let s = projected(&mut tape, out)?;
    let grads = tape.backward(s)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check over a set of parameter tensors.
///
/// `loss` evaluates the scalar objective at the current parameters; the
/// analytic gradients are given in the same order as `params`. When
/// `coords_per_tensor` is set, only that many evenly spaced coordinates of
/// each tensor are probed.
pub fn finite_diff_check_params<F>(
    params: &mut [Tensor],
    analytic: &[Tensor],
    mut loss: F,
    step: f64,
    coords_per_tensor: Option<usize>,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        let n = params[p].len();
        let coords: Vec<usize> = match coords_per_tensor {
            Some(k) if k < n => (0..k).map(|j| j * n / k + (n / k) / 2).collect(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + step;
            let up = loss(params)?;
            params[p].data_mut()[i] = orig - step;
            let down = loss(params)?;
            params[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
    }
    Ok(worst)
}
