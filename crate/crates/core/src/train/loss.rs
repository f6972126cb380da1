use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{FgttError, Result};

/// Probabilities are clamped to this floor before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Focal loss `−α_c (1 − p_c)^γ ln p_c`, averaged over the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    pub gamma: f64,
    pub alpha: Vec<f64>,
}

impl FocalLossParams {
    /// Plain cross-entropy: `γ = 0`, unit class weights.
    pub fn cross_entropy(n_classes: usize) -> Self {
        FocalLossParams {
            gamma: 0.0,
            alpha: vec![1.0; n_classes],
        }
    }

    /// `γ = 2` with inverse class-frequency weights rescaled to mean 1.
    pub fn inverse_frequency(labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_classes];
        for &y in labels {
            if y >= n_classes {
                return Err(FgttError::Contract(format!("label {y} out of range")));
            }
            counts[y] += 1;
        }
        if counts.contains(&0) {
            return Err(FgttError::DegenerateData(format!(
                "every class needs at least one example for inverse-frequency weights, counts {counts:?}"
            )));
        }
        let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
        let mean = inv.iter().sum::<f64>() / n_classes as f64;
        Ok(FocalLossParams {
            gamma: 2.0,
            alpha: inv.iter().map(|v| v / mean).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(FgttError::Param(format!(
                "focal gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(FgttError::Param(format!(
                "class weights must be > 0, got {:?}",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub(crate) fn focal_term(p: f64, gamma: f64, alpha: f64) -> f64 {
    let pc = p.max(PROB_FLOOR);
    let q = (1.0 - pc).max(0.0);
    let modulator = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    -alpha * modulator * pc.ln()
}

/// Derivative of [`focal_term`] with respect to `p`; zero inside the clamp.
pub(crate) fn focal_term_grad(p: f64, gamma: f64, alpha: f64) -> f64 {
    if p < PROB_FLOOR {
        return 0.0;
    }
    let q = (1.0 - p).max(0.0);
    let modulator = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let slope = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    alpha * (slope - modulator / p)
}

/// Mean focal loss of `probs` (`[batch × classes]`) against class ids.
pub fn focal_loss(probs: &Tensor, targets: &[usize], params: &FocalLossParams) -> Result<f64> {
    let b = probs.rows();
    let c = probs.cols();
    if targets.len() != b {
        return Err(FgttError::Contract(format!("{} targets for {b} rows", targets.len())));
    }
    if params.alpha.len() != c {
        return Err(FgttError::Contract(format!(
            "{} class weights for {c} classes",
            params.alpha.len()
        )));
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(FgttError::Contract(format!(
                "target class {t} out of range for {c} classes"
            )));
        }
        total += focal_term(probs.get2(i, t), params.gamma, params.alpha[t]);
    }
    Ok(total / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs_with_true(p: f64) -> Tensor {
        let rest = (1.0 - p) / 2.0;
        Tensor::from_rows(&[vec![p, rest, rest]]).unwrap()
    }

    #[test]
    fn cross_entropy_limit() {
        let l = focal_loss(&probs_with_true(0.5), &[0], &FocalLossParams::cross_entropy(3)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        for gamma in [0.0, 0.5, 2.0, 5.0] {
            let p = FocalLossParams {
                gamma,
                alpha: vec![1.0; 3],
            };
            assert_eq!(focal_loss(&probs_with_true(1.0), &[0], &p).unwrap(), 0.0);
            assert!(focal_term_grad(1.0, gamma, 1.0).is_finite());
        }
    }

    #[test]
    fn gamma_two_scalar_value() {
        let p = FocalLossParams {
            gamma: 2.0,
            alpha: vec![1.0; 3],
        };
        let l = focal_loss(&probs_with_true(0.9), &[0], &p).unwrap();
        assert!((l - 0.0010536).abs() < 1e-7, "{l}");
    }

    #[test]
    fn clamp_keeps_loss_finite() {
        let t = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let l = focal_loss(&t, &[0], &FocalLossParams::cross_entropy(3)).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn invalid_target_is_a_contract_error() {
        let err = focal_loss(&probs_with_true(0.5), &[3], &FocalLossParams::cross_entropy(3));
        assert!(matches!(err, Err(FgttError::Contract(_))));
    }

    #[test]
    fn inverse_frequency_weights_have_unit_mean() {
        let labels = [0, 0, 0, 0, 1, 1, 2];
        let p = FocalLossParams::inverse_frequency(&labels, 3).unwrap();
        let mean: f64 = p.alpha.iter().sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(p.alpha[2] > p.alpha[1] && p.alpha[1] > p.alpha[0]);
        assert_eq!(p.gamma, 2.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        for &(p, gamma) in &[(0.3, 2.0), (0.8, 0.5), (0.55, 0.0), (0.99, 3.0)] {
            let h = 1e-6;
            let num = (focal_term(p + h, gamma, 1.3) - focal_term(p - h, gamma, 1.3)) / (2.0 * h);
            let ana = focal_term_grad(p, gamma, 1.3);
            assert!(
                (num - ana).abs() < 1e-6 * ana.abs().max(1.0),
                "{p} {gamma}: {num} vs {ana}"
            );
        }
    }
}
