use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::baselines::{Booster, RandomForest};
use crate::error::{FgttError, Result};
use crate::model::FgttModel;
use crate::train::compute_metrics;

/// Anything that maps encoded rows to class ids.
pub trait Classifier {
    fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>>;
}

impl Classifier for FgttModel {
    fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.predict(x)
    }
}

impl Classifier for RandomForest {
    fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.predict(x)
    }
}

impl Classifier for Booster {
    fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.predict(x)
    }
}

impl<F: Fn(&Tensor) -> Result<Vec<usize>>> Classifier for F {
    fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        self(x)
    }
}

/// Label written into every importance table.
pub const METHOD: &str = "permutation importance (not SHAP)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub name: String,
    /// Mean drop in weighted F1 over the repeats.
    pub mean_drop: f64,
    pub std_drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_weighted_f1: f64,
    pub repeats: usize,
    /// Sorted by descending mean drop.
    pub features: Vec<ImportanceScore>,
    pub groups: Vec<ImportanceScore>,
}

fn score_blocks<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    y: &[usize],
    blocks: &[(String, Vec<usize>)],
    baseline: f64,
    repeats: usize,
    seed: u64,
    stream_base: u64,
) -> Result<Vec<ImportanceScore>> {
    let (n, p) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(blocks.len());
    for (b, (name, cols)) in blocks.iter().enumerate() {
        if let Some(&c) = cols.iter().find(|&&c| c >= p) {
            return Err(FgttError::Shape(format!("block {name} names column {c} of {p}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_base + b as u64);
        let mut drops = Vec::with_capacity(repeats);
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..repeats {
            perm.shuffle(&mut rng);
            let mut shuffled = x.clone();
            let src = x.data();
            let dst = shuffled.data_mut();
            for (i, &from) in perm.iter().enumerate() {
                for &c in cols {
                    dst[i * p + c] = src[from * p + c];
                }
            }
            let pred = model.predict_classes(&shuffled)?;
            drops.push(baseline - compute_metrics(&pred, y)?.weighted_f1);
        }
        let mean = drops.iter().sum::<f64>() / repeats as f64;
        let var = drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / repeats as f64;
        out.push(ImportanceScore {
            name: name.clone(),
            mean_drop: mean,
            std_drop: var.sqrt(),
        });
    }
    // stable: equal scores keep block order
    out.sort_by(|a, b| b.mean_drop.total_cmp(&a.mean_drop));
    Ok(out)
}

/// Drop in weighted F1 when a block of columns is shuffled across rows.
/// All columns of a block move together, so one-hot features stay valid.
/// `x` itself is left untouched.
pub fn permutation_importance<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    y: &[usize],
    features: &[(String, Vec<usize>)],
    groups: &[(String, Vec<usize>)],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(FgttError::Param("repeats must be at least 1".into()));
    }
    if x.rows() != y.len() {
        return Err(FgttError::Contract(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let baseline = compute_metrics(&model.predict_classes(x)?, y)?.weighted_f1;
    Ok(ImportanceReport {
        baseline_weighted_f1: baseline,
        repeats,
        features: score_blocks(model, x, y, features, baseline, repeats, seed, 0)?,
        groups: score_blocks(model, x, y, groups, baseline, repeats, seed, 1 << 32)?,
    })
}

impl ImportanceReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "level",
            "rank",
            "name",
            "mean_weighted_f1_drop",
            "std_weighted_f1_drop",
        ])?;
        for (level, rows) in [("group", &self.groups), ("feature", &self.features)] {
            for (i, s) in rows.iter().enumerate() {
                w.write_record([
                    METHOD.to_string(),
                    level.to_string(),
                    (i + 1).to_string(),
                    s.name.clone(),
                    s.mean_drop.to_string(),
                    s.std_drop.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
        Ok(())
    }
}
