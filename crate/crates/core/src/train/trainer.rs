use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{focal_loss, FocalLossParams};
use super::metrics::compute_metrics;
use super::optim::{Optimizer, OptimizerKind};
use crate::autodiff::Tensor;
use crate::error::{FgttError, Result};
use crate::model::transformer::argmax;
use crate::model::FgttModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.017,
            optimizer: OptimizerKind::Sgd,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FgttError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(FgttError::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Encoded rows and their labels.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub x: &'a Tensor,
    pub y: &'a [usize],
}

impl<'a> Labeled<'a> {
    pub fn new(x: &'a Tensor, y: &'a [usize]) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(FgttError::Contract(format!(
                "{} labels for inputs of shape {:?}",
                y.len(),
                x.shape()
            )));
        }
        if y.is_empty() {
            return Err(FgttError::Contract("empty split".into()));
        }
        Ok(Labeled { x, y })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_weighted_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_weighted_f1: f64,
}

impl TrainReport {
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "val_weighted_f1"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_weighted_f1.to_string(),
            ])?;
        }
        w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
        Ok(())
    }
}

/// Validation loss and weighted F1 in evaluation mode.
pub fn evaluate(model: &FgttModel, data: Labeled, loss: &FocalLossParams) -> Result<(f64, f64)> {
    let probs = model.predict_proba(data.x)?;
    let pred: Vec<usize> = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
    let l = focal_loss(&probs, data.y, loss)?;
    Ok((l, compute_metrics(&pred, data.y)?.weighted_f1))
}

/// Mini-batch training with early stopping on validation weighted F1.
///
/// The model ends up holding the parameters of the best epoch.
pub fn train(
    model: &mut FgttModel,
    train_set: Labeled,
    val_set: Labeled,
    loss: &FocalLossParams,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(model, train_set, val_set, loss, config, |_| {})
}

pub fn train_with_progress<F: FnMut(&EpochRecord)>(
    model: &mut FgttModel,
    train_set: Labeled,
    val_set: Labeled,
    loss: &FocalLossParams,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport> {
    config.validate()?;
    loss.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model.params())?;
    let n = train_set.y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = train_set.x.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train_set.y[i]).collect();
            let (l, grads) = model.loss_and_grads(&xb, &yb, loss, &mut rng)?;
            if !l.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(FgttError::Training {
                    epoch,
                    reason: format!("non-finite training loss {l}"),
                });
            }
            opt.step(model.params_mut(), &grads)?;
            total += l * batch.len() as f64;
        }
        let (val_loss, f1) = evaluate(model, val_set, loss)?;
        if !val_loss.is_finite() {
            return Err(FgttError::Training {
                epoch,
                reason: format!("non-finite validation loss {val_loss}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / n as f64,
            val_loss,
            val_weighted_f1: f1,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, model.params().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_f1, params) = best.expect("at least one epoch runs");
    model.params_mut().clone_from_slice(&params);
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_weighted_f1: best_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode::column_meta;
    use crate::data::{FeatureGroup, FeatureSchema, FeatureSpec};
    use crate::model::{partition_columns, FgttConfig};
    use rand::Rng;

    fn toy_model(seed: u64) -> FgttModel {
        let s = FeatureSchema::new(
            vec![
                FeatureSpec::numeric("u", FeatureGroup::Event),
                FeatureSpec::numeric("v", FeatureGroup::Traffic),
            ],
            vec![],
        )
        .unwrap();
        let p = partition_columns(&column_meta(&s), &s).unwrap();
        let cfg = FgttConfig {
            hidden_dim: 8,
            ffn_dim: 8,
            n_heads: 2,
            n_layers: 1,
            dropout_rate: 0.0,
            projector_hidden: 8,
            seed,
        };
        FgttModel::new(cfg, p).unwrap()
    }

    /// Three well-separated clusters in the plane.
    fn separable(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let centers = [(-2.0, 0.0), (2.0, 2.0), (2.0, -2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            x.push(centers[c].0 + rng.random_range(-0.5..0.5));
            x.push(centers[c].1 + rng.random_range(-0.5..0.5));
            y.push(c);
        }
        (Tensor::new(vec![n, 2], x).unwrap(), y)
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = separable(90, 1);
        let mut m = toy_model(2);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 90,
            max_epochs: 60,
            patience: 60,
            ..TrainConfig::default()
        };
        let set = Labeled::new(&x, &y).unwrap();
        let report = train(&mut m, set, set, &FocalLossParams::cross_entropy(3), &cfg).unwrap();
        for w in report.history[..6].windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{:?}", report.history);
        }
        let pred = m.predict(&x).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn patience_zero_stops_one_epoch_after_best() {
        let (x, y) = separable(30, 3);
        let mut m = toy_model(4);
        let cfg = TrainConfig {
            patience: 0,
            max_epochs: 50,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let set = Labeled::new(&x, &y).unwrap();
        let r = train(&mut m, set, set, &FocalLossParams::cross_entropy(3), &cfg).unwrap();
        assert!(r.history.len() < 50);
        assert_eq!(r.history.len(), r.best_epoch + 1);
    }

    #[test]
    fn deterministic_history_and_parameters() {
        let (x, y) = separable(45, 5);
        let set = Labeled::new(&x, &y).unwrap();
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 10,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = toy_model(6);
            let mut c = m.config().clone();
            c.dropout_rate = 0.3;
            m = FgttModel::from_parts(c, m.partition().clone(), m.params().to_vec()).unwrap();
            let r = train(&mut m, set, set, &FocalLossParams::cross_entropy(3), &cfg).unwrap();
            (r.history, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (x, y) = separable(30, 7);
        let set = Labeled::new(&x, &y).unwrap();
        let mut m = toy_model(8);
        for t in m.params_mut() {
            for v in t.data_mut() {
                *v *= 1e200;
            }
        }
        let cfg = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        match train(&mut m, set, set, &FocalLossParams::cross_entropy(3), &cfg) {
            Err(FgttError::Training { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn history_csv() {
        let r = TrainReport {
            history: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                val_weighted_f1: 0.75,
            }],
            best_epoch: 1,
            best_val_weighted_f1: 0.75,
        };
        let mut out = Vec::new();
        r.write_history_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,train_loss,val_loss,val_weighted_f1\n1,0.5,0.25,0.75\n"
        );
    }

    #[test]
    fn mismatched_split_rejected() {
        let x = Tensor::zeros(vec![3, 2]);
        assert!(Labeled::new(&x, &[0, 1]).is_err());
    }
}
