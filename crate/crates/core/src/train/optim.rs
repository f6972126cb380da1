use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{FgttError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[serde(rename = "rmsprop")]
    RmsProp,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::RmsProp];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FgttError::Config(format!("unknown optimizer {s:?}; expected sgd, adam or rmsprop")))
    }
}

/// Optimizer state for one ordered parameter list.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(FgttError::Config(format!("learning rate must be positive, got {lr}")));
        }
        let zeros = |on: bool| -> Vec<Vec<f64>> {
            if on {
                params.iter().map(|p| vec![0.0; p.len()]).collect()
            } else {
                Vec::new()
            }
        };
        Ok(Optimizer {
            kind,
            lr,
            step: 0,
            first: zeros(kind == OptimizerKind::Adam),
            second: zeros(kind != OptimizerKind::Sgd),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(FgttError::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(FgttError::Shape(format!(
                    "parameter {:?} and gradient {:?} differ",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * d;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * d * d;
                        *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            OptimizerKind::RmsProp => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let v = &mut self.second[i];
                    for (j, (w, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        v[j] = RMSPROP_DECAY * v[j] + (1.0 - RMSPROP_DECAY) * d * d;
                        *w -= lr * d / (v[j].sqrt() + RMSPROP_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![v])]
    }

    #[test]
    fn sgd_step() {
        let mut p = one(1.0);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, &p).unwrap();
        o.step(&mut p, &one(2.0)).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
        o.step(&mut p, &one(0.0)).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_scale_free() {
        for g in [1e-3, 1.0, 250.0] {
            let mut p = one(0.0);
            let mut o = Optimizer::new(OptimizerKind::Adam, 0.01, &p).unwrap();
            o.step(&mut p, &one(g)).unwrap();
            assert!((p[0].data()[0] + 0.01).abs() < 1e-6, "g={g}: {}", p[0].data()[0]);
        }
    }

    #[test]
    fn rmsprop_first_step() {
        // v = 0.1 g², so the step is lr / sqrt(0.1)
        let mut p = one(0.0);
        let mut o = Optimizer::new(OptimizerKind::RmsProp, 0.01, &p).unwrap();
        o.step(&mut p, &one(3.0)).unwrap();
        assert!((p[0].data()[0] + 0.01 / 0.1f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = one(0.0);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, &p).unwrap();
        assert!(o.step(&mut p, &[Tensor::vector(vec![1.0, 2.0])]).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0, &p).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!(OptimizerKind::parse("RMSProp").unwrap(), OptimizerKind::RmsProp);
        assert!(OptimizerKind::parse("lbfgs").is_err());
    }
}
