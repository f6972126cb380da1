use serde::{Deserialize, Serialize};

use crate::error::{FgttError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class distribution (forest) or a single leaf weight (booster).
    Leaf { value: Vec<f64> },
}

/// Axis-aligned binary tree stored as a node arena; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if width != self.n_features {
            return Err(FgttError::Shape(format!(
                "rows have {width} columns, tree was trained on {}",
                self.n_features
            )));
        }
        Ok(())
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_labels(y: &[usize], rows: usize) -> Result<usize> {
    if y.len() != rows {
        return Err(FgttError::Contract(format!("{} labels for {rows} rows", y.len())));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n_classes];
    for &c in y {
        seen[c] = true;
    }
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(FgttError::DegenerateData(
            "training labels contain fewer than two classes".into(),
        ));
    }
    Ok(n_classes)
}

/// Depth limits serialize as a number or `"none"` (TOML has no null).
pub(crate) mod depth_limit {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Depth(usize),
        Word(String),
    }

    fn to_repr(d: Option<usize>) -> Repr {
        d.map_or_else(|| Repr::Word("none".into()), Repr::Depth)
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<Option<usize>, E> {
        match r {
            Repr::Depth(d) => Ok(Some(d)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(E::custom(format!("max_depth must be a number or \"none\", got {w:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(d: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*d).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|d| to_repr(*d)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}
