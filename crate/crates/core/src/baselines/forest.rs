use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{argmax, check_labels, DecisionTree, Node};
use crate::autodiff::Tensor;
use crate::error::{FgttError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// `None` grows until leaves are pure or too small to split.
    #[serde(with = "super::tree::depth_limit")]
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Fraction of columns tried at each split; `None` means sqrt(columns).
    pub features_per_split: Option<f64>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 200,
            max_depth: Some(30),
            min_samples_split: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(FgttError::Config("n_estimators must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(FgttError::Config("min_samples_split must be at least 2".into()));
        }
        if let Some(f) = self.features_per_split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(FgttError::Config(format!(
                    "features_per_split must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    fn max_features(&self, p: usize) -> usize {
        let k = match self.features_per_split {
            Some(f) => (f * p as f64).round() as usize,
            None => (p as f64).sqrt().floor() as usize,
        };
        k.clamp(1, p)
    }
}

/// Settings for growing one classification tree.
#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Non-constant columns examined per split.
    pub max_features: usize,
}

struct Grower<'a> {
    x: &'a [f64],
    p: usize,
    y: &'a [usize],
    n_classes: usize,
    params: TreeParams,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn class_weights(&self, rows: &[(usize, f64)]) -> Vec<f64> {
        let mut w = vec![0.0; self.n_classes];
        for &(i, c) in rows {
            w[self.y[i]] += c;
        }
        w
    }

    fn leaf(&mut self, weights: Vec<f64>) -> usize {
        let total: f64 = weights.iter().sum();
        self.nodes.push(Node::Leaf {
            value: weights.iter().map(|w| w / total).collect(),
        });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold) by Gini decrease over randomly ordered
    /// columns, stopping after `max_features` non-constant ones. Zero-gain
    /// splits are accepted so patterns like XOR can be grown.
    fn best_split<R: Rng>(&self, rows: &[(usize, f64)], rng: &mut R) -> Option<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.p).collect();
        let mut visited = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        let total = self.class_weights(rows);
        let mut sorted: Vec<(f64, usize, f64)> = Vec::with_capacity(rows.len());
        for k in 0..self.p {
            if visited == self.params.max_features {
                break;
            }
            let j = rng.random_range(k..self.p);
            order.swap(k, j);
            let f = order[k];
            sorted.clear();
            sorted.extend(rows.iter().map(|&(i, w)| (self.x[i * self.p + f], i, w)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            visited += 1;
            let mut left = vec![0.0; self.n_classes];
            let (mut wl, wt) = (0.0, total.iter().sum::<f64>());
            for s in 0..sorted.len() - 1 {
                let (v, i, w) = sorted[s];
                left[self.y[i]] += w;
                wl += w;
                let next = sorted[s + 1].0;
                if next == v {
                    continue;
                }
                let wr = wt - wl;
                let mut score = 0.0;
                for c in 0..self.n_classes {
                    let r = total[c] - left[c];
                    score += left[c] * left[c] / wl + r * r / wr;
                }
                if best.is_none_or(|(b, _, _)| score > b) {
                    let mut thr = 0.5 * (v + next);
                    if thr >= next {
                        thr = v;
                    }
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow<R: Rng>(&mut self, rows: Vec<(usize, f64)>, depth: usize, rng: &mut R) -> usize {
        let weights = self.class_weights(&rows);
        let pure = weights.iter().filter(|w| **w > 0.0).count() <= 1;
        let at_depth = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || at_depth || rows.len() < self.params.min_samples_split {
            return self.leaf(weights);
        }
        let Some((feature, threshold)) = self.best_split(&rows, rng) else {
            return self.leaf(weights);
        };
        let (l, r): (Vec<_>, Vec<_>) = rows
            .into_iter()
            .partition(|&(i, _)| self.x[i * self.p + feature] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: Vec::new() });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a Gini classification tree on `rows` (index, weight) of `x`.
pub fn grow_classification_tree<R: Rng>(
    x: &Tensor,
    y: &[usize],
    n_classes: usize,
    rows: Vec<(usize, f64)>,
    params: TreeParams,
    rng: &mut R,
) -> DecisionTree {
    let p = x.cols();
    let mut g = Grower {
        x: x.data(),
        p,
        y,
        n_classes,
        params,
        nodes: Vec::new(),
    };
    g.grow(rows, 0, rng);
    DecisionTree {
        nodes: g.nodes,
        n_features: p,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
}

impl RandomForest {
    pub fn fit(x: &Tensor, y: &[usize], config: &ForestConfig) -> Result<RandomForest> {
        config.validate()?;
        let n_classes = check_labels(y, x.rows())?;
        let n = x.rows();
        let params = TreeParams {
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split,
            max_features: config.max_features(x.cols()),
        };
        let trees = (0..config.n_estimators)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                let rows = if config.bootstrap {
                    let mut counts = vec![0u32; n];
                    for _ in 0..n {
                        counts[rng.random_range(0..n)] += 1;
                    }
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| **c > 0)
                        .map(|(i, c)| (i, *c as f64))
                        .collect()
                } else {
                    (0..n).map(|i| (i, 1.0)).collect()
                };
                grow_classification_tree(x, y, n_classes, rows, params, &mut rng)
            })
            .collect();
        Ok(RandomForest { trees, n_classes })
    }

    /// Mean of the trees' leaf distributions.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.rows();
        if let Some(t) = self.trees.first() {
            t.check_width(x.cols())?;
        }
        let k = self.n_classes;
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = x.row(i);
            let acc = &mut out[i * k..(i + 1) * k];
            for t in &self.trees {
                for (a, v) in acc.iter_mut().zip(t.leaf(row)) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a /= self.trees.len() as f64;
            }
        }
        Tensor::new(vec![n, k], out)
    }

    /// Most probable class, lowest class id on ties.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(n_per: usize) -> (Tensor, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            for k in 0..n_per {
                x.push(a + 0.01 * k as f64);
                x.push(b + 0.01 * k as f64);
                y.push(if a == b { 0 } else { 1 });
            }
        }
        (Tensor::new(vec![y.len(), 2], x).unwrap(), y)
    }

    #[test]
    fn one_split_suffices() {
        let x = Tensor::new(vec![4, 1], vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        let y = [0, 0, 1, 1];
        let cfg = ForestConfig {
            n_estimators: 1,
            max_depth: Some(1),
            min_samples_split: 2,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = RandomForest::fit(&x, &y, &cfg).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y);
        assert_eq!(f.trees[0].depth(), 1);
    }

    #[test]
    fn xor_is_shattered() {
        let (x, y) = xor(5);
        let cfg = ForestConfig {
            n_estimators: 50,
            max_depth: Some(3),
            min_samples_split: 2,
            features_per_split: Some(1.0),
            ..ForestConfig::default()
        };
        let f = RandomForest::fit(&x, &y, &cfg).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y);
    }

    #[test]
    fn unbounded_tree_fits_consistent_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let x = Tensor::new(vec![n, 3], (0..n * 3).map(|_| rng.random_range(0..5) as f64).collect()).unwrap();
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        // make labels a function of x so the data are consistent
        for i in 0..n {
            for j in 0..i {
                if x.row(i) == x.row(j) {
                    y[i] = y[j];
                    break;
                }
            }
        }
        let tree = grow_classification_tree(
            &x,
            &y,
            3,
            (0..n).map(|i| (i, 1.0)).collect(),
            TreeParams {
                max_depth: None,
                min_samples_split: 2,
                max_features: 1,
            },
            &mut rng,
        );
        for i in 0..n {
            assert_eq!(argmax(tree.leaf(x.row(i))), y[i]);
        }
    }

    #[test]
    fn identical_trees_and_ties() {
        let (x, y) = xor(2);
        let cfg = ForestConfig {
            n_estimators: 1,
            min_samples_split: 2,
            ..ForestConfig::default()
        };
        let single = RandomForest::fit(&x, &y, &cfg).unwrap();
        let tripled = RandomForest {
            trees: vec![single.trees[0].clone(); 3],
            n_classes: 2,
        };
        assert_eq!(single.predict_proba(&x).unwrap(), tripled.predict_proba(&x).unwrap());

        let a = DecisionTree {
            nodes: vec![Node::Leaf { value: vec![1.0, 0.0] }],
            n_features: 2,
        };
        let b = DecisionTree {
            nodes: vec![Node::Leaf { value: vec![0.0, 1.0] }],
            n_features: 2,
        };
        let vote = RandomForest {
            trees: vec![b, a],
            n_classes: 2,
        };
        assert_eq!(vote.predict(&x).unwrap(), vec![0; x.rows()]);
        let p = vote.predict_proba(&x).unwrap();
        for i in 0..p.rows() {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let (x, y) = xor(4);
        let cfg = ForestConfig {
            n_estimators: 5,
            seed: 9,
            ..ForestConfig::default()
        };
        assert_eq!(
            RandomForest::fit(&x, &y, &cfg).unwrap(),
            RandomForest::fit(&x, &y, &cfg).unwrap()
        );
        assert!(RandomForest::fit(&x, &vec![1; x.rows()], &cfg).is_err());
        let bad = ForestConfig {
            min_samples_split: 1,
            ..ForestConfig::default()
        };
        assert!(bad.validate().is_err());
        let f = RandomForest::fit(&x, &y, &cfg).unwrap();
        assert!(f.predict(&Tensor::zeros(vec![1, 3])).is_err());
    }
}
