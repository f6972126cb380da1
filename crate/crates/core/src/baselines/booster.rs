use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{argmax, check_labels, DecisionTree, Node};
use crate::autodiff::Tensor;
use crate::error::{FgttError, Result};

/// Hessians are floored here so leaf weights stay finite.
const MIN_HESSIAN: f64 = 1e-16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoosterConfig {
    pub eta: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Penalty per split; a split must gain more than this.
    pub gamma_complexity: f64,
    /// Minimum Hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoosterConfig {
    fn default() -> Self {
        BoosterConfig {
            eta: 0.05,
            n_estimators: 100,
            max_depth: 7,
            lambda: 1.0,
            gamma_complexity: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl BoosterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(FgttError::Config(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.n_estimators == 0 {
            return Err(FgttError::Config("n_estimators must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.gamma_complexity >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(FgttError::Config(
                "lambda, gamma_complexity and min_child_weight must be >= 0".into(),
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(FgttError::Config(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        Ok(())
    }
}

/// Settings for one second-order regression tree.
#[derive(Clone, Copy, Debug)]
pub struct SplitParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma_complexity: f64,
    pub min_child_weight: f64,
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

/// Column orderings of the rows, computed once per fit.
pub struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    pub fn new(x: &Tensor) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let d = x.data();
        let order = (0..p)
            .map(|f| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| d[a * p + f].total_cmp(&d[b * p + f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Exact greedy tree grown level by level: each level makes one pass over
/// every presorted column and scores all open nodes at once.
///
/// `active[i]` marks rows used for this tree.
pub fn grow_regression_tree(
    x: &Tensor,
    sorted: &Presorted,
    g: &[f64],
    h: &[f64],
    active: &[bool],
    params: SplitParams,
) -> DecisionTree {
    let (n, p) = (x.rows(), x.cols());
    let d = x.data();
    const NONE: usize = usize::MAX;
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: vec![0.0] }];
    // node id for every active row, NONE once its node is final
    let mut node_of: Vec<usize> = (0..n).map(|i| if active[i] { 0 } else { NONE }).collect();
    let mut open: Vec<usize> = vec![0];
    let mut depth = 0;
    while !open.is_empty() {
        // totals per open node
        let slot_of = |node: usize, open: &[usize]| open.binary_search(&node).ok();
        let mut tg = vec![0.0; open.len()];
        let mut th = vec![0.0; open.len()];
        for i in 0..n {
            if let Some(s) = (node_of[i] != NONE).then(|| slot_of(node_of[i], &open)).flatten() {
                tg[s] += g[i];
                th[s] += h[i];
            }
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        if depth < params.max_depth {
            let mut slot = vec![NONE; nodes.len()];
            for (s, &o) in open.iter().enumerate() {
                slot[o] = s;
            }
            let mut gl = vec![0.0; open.len()];
            let mut hl = vec![0.0; open.len()];
            let mut last = vec![f64::NAN; open.len()];
            for f in 0..p {
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &i in &sorted.order[f] {
                    let node = node_of[i];
                    if node == NONE || slot[node] == NONE {
                        continue;
                    }
                    let s = slot[node];
                    let v = d[i * p + f];
                    if !last[s].is_nan() && v != last[s] {
                        let (gr, hr) = (tg[s] - gl[s], th[s] - hl[s]);
                        if hl[s] >= params.min_child_weight && hr >= params.min_child_weight {
                            let gain = split_gain(gl[s], hl[s], gr, hr, params.lambda, params.gamma_complexity);
                            if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                let mut thr = 0.5 * (last[s] + v);
                                if thr >= v {
                                    thr = last[s];
                                }
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold: thr,
                                });
                            }
                        }
                    }
                    gl[s] += g[i];
                    hl[s] += h[i];
                    last[s] = v;
                }
            }
        }
        let mut next_open = Vec::new();
        let mut children = vec![(NONE, NONE); open.len()];
        for (s, &node) in open.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: vec![0.0] });
                    nodes.push(Node::Leaf { value: vec![0.0] });
                    nodes[node] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    children[s] = (left, left + 1);
                    next_open.push(left);
                    next_open.push(left + 1);
                }
                None => {
                    nodes[node] = Node::Leaf {
                        value: vec![leaf_weight(tg[s], th[s].max(MIN_HESSIAN), params.lambda)],
                    };
                }
            }
        }
        for i in 0..n {
            let node = node_of[i];
            if node == NONE {
                continue;
            }
            let Some(s) = slot_of(node, &open) else { continue };
            node_of[i] = match (best[s], children[s]) {
                (Some(c), (l, r)) => {
                    if d[i * p + c.feature] <= c.threshold {
                        l
                    } else {
                        r
                    }
                }
                (None, _) => NONE,
            };
        }
        open = next_open;
        depth += 1;
    }
    DecisionTree { nodes, n_features: p }
}

/// Softmax gradient booster: initial logits are the log class priors, then
/// each round fits one second-order tree per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub base_logits: Vec<f64>,
    pub eta: f64,
    /// `rounds[r][k]` is the tree for class `k` in round `r`.
    pub rounds: Vec<Vec<DecisionTree>>,
}

fn softmax_inplace(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Mean softmax cross-entropy of logits `[n × k]`.
pub fn log_loss(logits: &[f64], y: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.chunks(k).zip(y) {
        let mut p = row.to_vec();
        softmax_inplace(&mut p);
        total -= p[t].max(1e-300).ln();
    }
    total / y.len() as f64
}

impl Booster {
    pub fn fit(x: &Tensor, y: &[usize], config: &BoosterConfig) -> Result<Booster> {
        Self::fit_with_trace(x, y, config, |_, _| {})
    }

    /// `on_round(round, logits)` sees the training logits after each round.
    pub fn fit_with_trace<F: FnMut(usize, &[f64])>(
        x: &Tensor,
        y: &[usize],
        config: &BoosterConfig,
        mut on_round: F,
    ) -> Result<Booster> {
        config.validate()?;
        let k = check_labels(y, x.rows())?;
        let n = x.rows();
        let mut counts = vec![0.0; k];
        for &c in y {
            counts[c] += 1.0;
        }
        let base_logits: Vec<f64> = counts.iter().map(|c: &f64| (c.max(0.5) / n as f64).ln()).collect();
        let mut logits: Vec<f64> = (0..n).flat_map(|_| base_logits.iter().copied()).collect();
        let sorted = Presorted::new(x);
        let params = SplitParams {
            max_depth: config.max_depth,
            lambda: config.lambda,
            gamma_complexity: config.gamma_complexity,
            min_child_weight: config.min_child_weight,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut rounds = Vec::with_capacity(config.n_estimators);
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut probs = vec![0.0; n * k];
        for round in 0..config.n_estimators {
            probs.copy_from_slice(&logits);
            for row in probs.chunks_mut(k) {
                softmax_inplace(row);
            }
            let active: Vec<bool> = if config.subsample < 1.0 {
                let m = ((config.subsample * n as f64).round() as usize).max(1);
                let picked = rand::seq::index::sample(&mut rng, n, m);
                let mut a = vec![false; n];
                for i in picked {
                    a[i] = true;
                }
                a
            } else {
                vec![true; n]
            };
            let mut trees = Vec::with_capacity(k);
            for c in 0..k {
                for i in 0..n {
                    let pc = probs[i * k + c];
                    g[i] = pc - if y[i] == c { 1.0 } else { 0.0 };
                    h[i] = (pc * (1.0 - pc)).max(MIN_HESSIAN);
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(FgttError::Training {
                        epoch: round + 1,
                        reason: "non-finite booster gradient".into(),
                    });
                }
                trees.push(grow_regression_tree(x, &sorted, &g, &h, &active, params));
            }
            for i in 0..n {
                let row = x.row(i);
                for (c, t) in trees.iter().enumerate() {
                    logits[i * k + c] += config.eta * t.leaf(row)[0];
                }
            }
            on_round(round, &logits);
            rounds.push(trees);
            let _ = rng.random::<u32>();
        }
        Ok(Booster {
            base_logits,
            eta: config.eta,
            rounds,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.base_logits.len()
    }

    pub fn decision_function(&self, x: &Tensor) -> Result<Tensor> {
        let k = self.n_classes();
        if let Some(t) = self.rounds.first().and_then(|r| r.first()) {
            t.check_width(x.cols())?;
        }
        let mut out = Vec::with_capacity(x.rows() * k);
        for i in 0..x.rows() {
            let row = x.row(i);
            let mut l = self.base_logits.clone();
            for trees in &self.rounds {
                for (c, t) in trees.iter().enumerate() {
                    l[c] += self.eta * t.leaf(row)[0];
                }
            }
            out.extend(l);
        }
        Tensor::new(vec![x.rows(), k], out)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut l = self.decision_function(x)?;
        let k = self.n_classes();
        for row in l.data_mut().chunks_mut(k) {
            softmax_inplace(row);
        }
        Ok(l)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_leaf_by_hand() {
        let x = Tensor::new(vec![4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let g = [0.5, -0.5, 0.25, 0.75];
        let h = [0.25, 0.25, 0.5, 0.5];
        let params = SplitParams {
            max_depth: 0,
            lambda: 1.0,
            gamma_complexity: 0.0,
            min_child_weight: 0.0,
        };
        let t = grow_regression_tree(&x, &Presorted::new(&x), &g, &h, &[true; 4], params);
        // G = 1, H = 1.5
        assert_eq!(t.nodes.len(), 1);
        assert!((t.leaf(&[0.0])[0] + 1.0 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn best_split_and_weights_by_hand() {
        let x = Tensor::new(vec![4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let g = [-1.0, -1.0, 1.0, 1.0];
        let h = [1.0; 4];
        let params = SplitParams {
            max_depth: 1,
            lambda: 0.0,
            gamma_complexity: 0.0,
            min_child_weight: 0.0,
        };
        let t = grow_regression_tree(&x, &Presorted::new(&x), &g, &h, &[true; 4], params);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf(&[1.0])[0], 1.0);
        assert_eq!(t.leaf(&[2.0])[0], -1.0);
        match t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 1.5),
            _ => panic!("root should split"),
        }
        assert_eq!(split_gain(-2.0, 2.0, 2.0, 2.0, 0.0, 0.0), 2.0);
    }

    #[test]
    fn large_gamma_prevents_splits() {
        let x = Tensor::new(vec![4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let g = [-1.0, -1.0, 1.0, 1.0];
        let params = SplitParams {
            max_depth: 3,
            lambda: 0.0,
            gamma_complexity: 2.0 + 1e-9,
            min_child_weight: 0.0,
        };
        let t = grow_regression_tree(&x, &Presorted::new(&x), &g, &[1.0; 4], &[true; 4], params);
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn one_stump_round_keeps_log_prior() {
        let x = Tensor::new(vec![6, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = [0, 0, 0, 1, 1, 2];
        let cfg = BoosterConfig {
            eta: 1.0,
            n_estimators: 1,
            max_depth: 0,
            lambda: 0.0,
            ..BoosterConfig::default()
        };
        let b = Booster::fit(&x, &y, &cfg).unwrap();
        let l = b.decision_function(&x).unwrap();
        let prior = [0.5f64.ln(), (1.0f64 / 3.0).ln(), (1.0f64 / 6.0).ln()];
        for i in 0..6 {
            let shift = l.row(i)[0] - prior[0];
            for c in 0..3 {
                assert!((l.row(i)[c] - prior[c] - shift).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_loss_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 120;
        let x = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..n)
            .map(|i| {
                let r = x.row(i);
                if r[0] + 0.3 * rng.random_range(-1.0..1.0) > 0.3 {
                    0
                } else if r[1] > 0.0 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let cfg = BoosterConfig {
            eta: 0.1,
            n_estimators: 50,
            max_depth: 3,
            ..BoosterConfig::default()
        };
        let mut losses = Vec::new();
        Booster::fit_with_trace(&x, &y, &cfg, |_, l| losses.push(log_loss(l, &y, 3))).unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{w:?}");
        }
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn deterministic_with_subsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::new(vec![40, 3], (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let cfg = BoosterConfig {
            n_estimators: 5,
            subsample: 0.5,
            seed: 3,
            ..BoosterConfig::default()
        };
        assert_eq!(Booster::fit(&x, &y, &cfg).unwrap(), Booster::fit(&x, &y, &cfg).unwrap());
        assert!(BoosterConfig {
            eta: 0.0,
            ..BoosterConfig::default()
        }
        .validate()
        .is_err());
    }
}
