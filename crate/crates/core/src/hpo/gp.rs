use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{FgttError, Result};

/// Candidate kernel length-scales (the encoding lives in the unit cube).
pub const LENGTHSCALES: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0];
/// Candidate observation-noise variances on standardized targets.
pub const NOISE_LEVELS: [f64; 5] = [1e-6, 1e-4, 1e-3, 1e-2, 1e-1];
const MAX_JITTER: f64 = 1e-4;

pub fn matern52(r: f64, lengthscale: f64) -> f64 {
    let s = 5f64.sqrt() * r / lengthscale;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Zero-mean GP with a unit-variance Matérn-5/2 kernel on standardized
/// targets.
#[derive(Clone, Debug)]
pub struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengthscale: f64,
    noise: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal: f64,
    best_observed: f64,
}

fn factor(xs: &[Vec<f64>], lengthscale: f64, noise: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| matern52(dist(&xs[i], &xs[j]), lengthscale));
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Some((c, noise + jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER {
            return None;
        }
    }
}

impl GaussianProcess {
    /// Fits on encoded points; length-scale and noise are picked by
    /// marginal likelihood over the fixed grids (first wins on ties).
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(FgttError::Contract(format!(
                "{} points for {} targets",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 2 {
            return Err(FgttError::Surrogate("need at least two completed trials".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) || xs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(FgttError::Surrogate("non-finite training data".into()));
        }
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_scale = if sd > 1e-12 { sd } else { 1.0 };
        let z = DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - y_mean) / y_scale));

        let mut best: Option<GaussianProcess> = None;
        for &ls in &LENGTHSCALES {
            for &noise in &NOISE_LEVELS {
                let Some((chol, used_noise)) = factor(xs, ls, noise) else {
                    continue;
                };
                let alpha = chol.solve(&z);
                let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
                let lml = -0.5 * z.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
                if best.as_ref().is_none_or(|b| lml > b.log_marginal) {
                    best = Some(GaussianProcess {
                        xs: xs.to_vec(),
                        y_mean,
                        y_scale,
                        lengthscale: ls,
                        noise: used_noise,
                        chol,
                        alpha,
                        log_marginal: lml,
                        best_observed: ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    });
                }
            }
        }
        best.ok_or_else(|| FgttError::Surrogate("kernel matrix is not positive definite even with jitter".into()))
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Noise variance in standardized units.
    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn best_observed(&self) -> f64 {
        self.best_observed
    }

    /// Posterior mean and variance of the latent function, in the units of
    /// the observed targets.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| matern52(dist(xi, x), self.lengthscale)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let var = (1.0 - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * self.y_scale * var)
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.sqrt();
    let gap = mean - best;
    if sd <= 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
    (gap * cdf + sd * pdf).max(0.0)
}
