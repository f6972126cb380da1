use std::io::Write;

use serde::{Deserialize, Serialize};

use super::booster::{Booster, BoosterConfig};
use super::forest::{ForestConfig, RandomForest};
use crate::autodiff::Tensor;
use crate::data::stratified_kfold;
use crate::error::{FgttError, Result};
use crate::train::compute_metrics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    #[serde(with = "super::tree::depth_limit::list")]
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            n_estimators: vec![100, 200, 500],
            max_depth: vec![None, Some(10), Some(20), Some(30)],
            min_samples_split: vec![2, 5, 10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoosterGrid {
    pub eta: Vec<f64>,
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
}

impl Default for BoosterGrid {
    fn default() -> Self {
        BoosterGrid {
            eta: vec![0.01, 0.05, 0.1, 0.3],
            n_estimators: vec![100, 200, 500],
            max_depth: vec![3, 5, 7, 9],
        }
    }
}

/// A model family plus the parameter lists to cross.  Fields not in the
/// grid come from `base`.
#[derive(Clone, Debug, PartialEq)]
pub enum Grid {
    Forest { base: ForestConfig, grid: ForestGrid },
    Booster { base: BoosterConfig, grid: BoosterGrid },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Candidate {
    Forest(ForestConfig),
    Booster(BoosterConfig),
}

impl Candidate {
    pub fn family(&self) -> &'static str {
        match self {
            Candidate::Forest(_) => "forest",
            Candidate::Booster(_) => "booster",
        }
    }

    /// The grid parameters as (name, value) pairs.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        match self {
            Candidate::Forest(c) => vec![
                ("n_estimators", c.n_estimators.to_string()),
                ("max_depth", c.max_depth.map_or("none".into(), |d| d.to_string())),
                ("min_samples_split", c.min_samples_split.to_string()),
            ],
            Candidate::Booster(c) => vec![
                ("eta", c.eta.to_string()),
                ("n_estimators", c.n_estimators.to_string()),
                ("max_depth", c.max_depth.to_string()),
            ],
        }
    }

    pub fn fit_predict(&self, x: &Tensor, y: &[usize], eval: &Tensor) -> Result<Vec<usize>> {
        match self {
            Candidate::Forest(c) => RandomForest::fit(x, y, c)?.predict(eval),
            Candidate::Booster(c) => Booster::fit(x, y, c)?.predict(eval),
        }
    }
}

impl Grid {
    pub fn forest_default() -> Self {
        Grid::Forest {
            base: ForestConfig::default(),
            grid: ForestGrid::default(),
        }
    }

    pub fn booster_default() -> Self {
        Grid::Booster {
            base: BoosterConfig::default(),
            grid: BoosterGrid::default(),
        }
    }

    /// All combinations, last list varying fastest.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        match self {
            Grid::Forest { base, grid } => {
                for &n in &grid.n_estimators {
                    for &d in &grid.max_depth {
                        for &m in &grid.min_samples_split {
                            out.push(Candidate::Forest(ForestConfig {
                                n_estimators: n,
                                max_depth: d,
                                min_samples_split: m,
                                ..base.clone()
                            }));
                        }
                    }
                }
            }
            Grid::Booster { base, grid } => {
                for &eta in &grid.eta {
                    for &n in &grid.n_estimators {
                        for &d in &grid.max_depth {
                            out.push(Candidate::Booster(BoosterConfig {
                                eta,
                                n_estimators: n,
                                max_depth: d,
                                ..base.clone()
                            }));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvRow {
    pub candidate: Candidate,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub rows: Vec<CvRow>,
    /// Index into `rows` of the winner.
    pub best: usize,
}

impl CvResult {
    pub fn best_candidate(&self) -> &Candidate {
        &self.rows[self.best].candidate
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = self.rows.first() else {
            return Ok(());
        };
        let mut header: Vec<String> = vec!["family".into()];
        header.extend(first.candidate.params().into_iter().map(|(k, _)| k.to_string()));
        header.extend((1..=first.fold_f1.len()).map(|i| format!("fold_{i}_weighted_f1")));
        header.push("mean_weighted_f1".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![r.candidate.family().into()];
            rec.extend(r.candidate.params().into_iter().map(|(_, v)| v));
            rec.extend(r.fold_f1.iter().map(|f| f.to_string()));
            rec.push(r.mean_f1.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
        Ok(())
    }
}

/// Scores every grid cell by mean validation weighted F1 over `k`
/// stratified folds. Ties keep the earliest cell.
pub fn grid_search_cv(grid: &Grid, x: &Tensor, y: &[usize], k: usize, seed: u64) -> Result<CvResult> {
    if x.rows() != y.len() {
        return Err(FgttError::Contract(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(FgttError::Param("empty parameter grid".into()));
    }
    let folds = stratified_kfold(y, k, seed)?;
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let present: Vec<usize> = (0..n_classes).filter(|c| y.contains(c)).collect();
    for (i, f) in folds.iter().enumerate() {
        for &c in &present {
            if !f.iter().any(|&r| y[r] == c) {
                return Err(FgttError::Stratification(format!(
                    "fold {} has no rows of class {c}",
                    i + 1
                )));
            }
        }
    }
    let splits: Vec<(Vec<usize>, &Vec<usize>)> = (0..k)
        .map(|i| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            (train, &folds[i])
        })
        .collect();

    let mut rows: Vec<CvRow> = Vec::with_capacity(candidates.len());
    let mut best = 0;
    for (ci, cand) in candidates.into_iter().enumerate() {
        let mut fold_f1 = Vec::with_capacity(k);
        for (train, val) in &splits {
            let xt = x.select_rows(train);
            let yt: Vec<usize> = train.iter().map(|&r| y[r]).collect();
            let xv = x.select_rows(val);
            let yv: Vec<usize> = val.iter().map(|&r| y[r]).collect();
            let pred = cand.fit_predict(&xt, &yt, &xv)?;
            fold_f1.push(compute_metrics(&pred, &yv)?.weighted_f1);
        }
        let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
        if ci > 0 && mean_f1 > rows[best].mean_f1 {
            best = ci;
        }
        rows.push(CvRow {
            candidate: cand,
            fold_f1,
            mean_f1,
        });
    }
    Ok(CvResult { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(n_per_cell: usize) -> (Tensor, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..n_per_cell {
            let j = 0.01 * k as f64;
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                x.push(a + j);
                x.push(b - j);
                y.push(if a == b { 0 } else { 1 });
            }
        }
        (Tensor::new(vec![y.len(), 2], x).unwrap(), y)
    }

    #[test]
    fn default_grid_sizes() {
        assert_eq!(Grid::forest_default().candidates().len(), 36);
        assert_eq!(Grid::booster_default().candidates().len(), 48);
    }

    #[test]
    fn single_cell_is_returned() {
        let (x, y) = xor(10);
        let grid = Grid::Forest {
            base: ForestConfig {
                n_estimators: 5,
                ..ForestConfig::default()
            },
            grid: ForestGrid {
                n_estimators: vec![5],
                max_depth: vec![Some(3)],
                min_samples_split: vec![2],
            },
        };
        let r = grid_search_cv(&grid, &x, &y, 5, 0).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.best, 0);
        assert_eq!(r.rows[0].fold_f1.len(), 5);
    }

    #[test]
    fn deeper_forest_wins_on_xor() {
        let (x, y) = xor(10);
        let grid = Grid::Forest {
            base: ForestConfig::default(),
            grid: ForestGrid {
                n_estimators: vec![20],
                max_depth: vec![Some(1), Some(3)],
                min_samples_split: vec![2],
            },
        };
        let r = grid_search_cv(&grid, &x, &y, 5, 1).unwrap();
        assert_eq!(r.best, 1, "{:?}", r.rows);
        assert!(r.rows[1].mean_f1 > r.rows[0].mean_f1);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("family,n_estimators,max_depth,min_samples_split,fold_1_weighted_f1"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn ties_keep_first_cell() {
        let (x, y) = xor(5);
        let grid = Grid::Booster {
            base: BoosterConfig::default(),
            grid: BoosterGrid {
                eta: vec![0.3],
                n_estimators: vec![3, 3],
                max_depth: vec![2],
            },
        };
        let r = grid_search_cv(&grid, &x, &y, 2, 0).unwrap();
        assert_eq!(r.rows[0].mean_f1, r.rows[1].mean_f1);
        assert_eq!(r.best, 0);
    }

    #[test]
    fn tiny_class_fails_stratification() {
        let x = Tensor::zeros(vec![10, 1]);
        let y = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        assert!(grid_search_cv(&Grid::forest_default(), &x, &y, 5, 0).is_err());
    }
}
