use serde::{Deserialize, Serialize};

use crate::error::{FgttError, Result};

/// Last-layer attention weights, `[batch × heads × seq × seq]`, with the CLS
/// token at position 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    batch: usize,
    heads: usize,
    seq: usize,
    weights: Vec<f64>,
}

impl AttentionRecord {
    pub fn new(batch: usize, heads: usize, seq: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), batch * heads * seq * seq, "attention record size");
        AttentionRecord {
            batch,
            heads,
            seq,
            weights,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// All heads of example `i`, `[heads × seq × seq]`.
    pub fn example(&self, i: usize) -> &[f64] {
        let n = self.heads * self.seq * self.seq;
        &self.weights[i * n..(i + 1) * n]
    }

    /// Head-averaged `seq × seq` matrix of example `i`.
    pub fn head_mean(&self, i: usize) -> Vec<f64> {
        let s2 = self.seq * self.seq;
        let mut out = vec![0.0; s2];
        for h in self.example(i).chunks(s2) {
            for (o, w) in out.iter_mut().zip(h) {
                *o += w / self.heads as f64;
            }
        }
        out
    }

    /// Head-averaged CLS row of example `i` over the group tokens, with the
    /// CLS self-attention removed and the rest renormalized.
    pub fn cls_scores(&self, i: usize) -> Vec<f64> {
        cls_row(&self.head_mean(i), self.seq)
    }

    pub fn extend(&mut self, other: AttentionRecord) {
        assert_eq!(
            (self.heads, self.seq),
            (other.heads, other.seq),
            "attention record layout"
        );
        self.batch += other.batch;
        self.weights.extend(other.weights);
    }

    pub fn select(&self, rows: &[usize]) -> AttentionRecord {
        let mut weights = Vec::with_capacity(rows.len() * self.heads * self.seq * self.seq);
        for &r in rows {
            weights.extend_from_slice(self.example(r));
        }
        AttentionRecord::new(rows.len(), self.heads, self.seq, weights)
    }
}

fn cls_row(matrix: &[f64], seq: usize) -> Vec<f64> {
    let row = &matrix[1..seq];
    let mass: f64 = row.iter().sum();
    if mass > 0.0 {
        row.iter().map(|w| w / mass).collect()
    } else {
        vec![1.0 / (seq - 1) as f64; seq - 1]
    }
}

/// Attention summary for the examples of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAttention {
    pub class: usize,
    pub count: usize,
    /// Group scores from the averaged CLS row (CLS self-attention excluded,
    /// renormalized to sum to 1).
    pub cls_scores: Vec<f64>,
    /// Head- and example-averaged `seq × seq` matrix, row-major.
    pub pair_heatmap: Vec<f64>,
}

/// Averages attention over the examples whose label is `class`.
pub fn aggregate_attention(record: &AttentionRecord, labels: &[usize], class: usize) -> Result<ClassAttention> {
    if labels.len() != record.batch() {
        return Err(FgttError::Contract(format!(
            "{} labels for {} attention records",
            labels.len(),
            record.batch()
        )));
    }
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
    if rows.is_empty() {
        return Err(FgttError::Aggregation(format!("no examples of class {class}")));
    }
    let s = record.seq();
    let mut heat = vec![0.0; s * s];
    for &r in &rows {
        for (h, v) in heat.iter_mut().zip(record.head_mean(r)) {
            *h += v;
        }
    }
    for h in heat.iter_mut() {
        *h /= rows.len() as f64;
    }
    Ok(ClassAttention {
        class,
        count: rows.len(),
        cls_scores: cls_row(&heat, s),
        pair_heatmap: heat,
    })
}

/// [`aggregate_attention`] for every class `0..n_classes`.
pub fn aggregate_by_class(record: &AttentionRecord, labels: &[usize], n_classes: usize) -> Result<Vec<ClassAttention>> {
    (0..n_classes).map(|c| aggregate_attention(record, labels, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_example_single_head() {
        let w = vec![0.5, 0.25, 0.25, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4];
        let r = AttentionRecord::new(1, 1, 3, w.clone());
        let a = aggregate_attention(&r, &[2], 2).unwrap();
        assert_eq!(a.pair_heatmap, w);
        assert_eq!(a.cls_scores, vec![0.5, 0.5]);
    }

    #[test]
    fn uniform_attention_gives_equal_scores() {
        let r = AttentionRecord::new(2, 4, 9, vec![1.0 / 9.0; 2 * 4 * 81]);
        let a = aggregate_attention(&r, &[0, 0], 0).unwrap();
        for s in a.cls_scores {
            assert!((s - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn heads_are_averaged() {
        let mut w = vec![0.0; 2 * 4];
        w[..4].copy_from_slice(&[0.0, 1.0, 0.5, 0.5]);
        w[4..].copy_from_slice(&[1.0, 0.0, 0.5, 0.5]);
        let r = AttentionRecord::new(1, 2, 2, w);
        assert_eq!(r.head_mean(0), vec![0.5, 0.5, 0.5, 0.5]);
        assert_eq!(r.cls_scores(0), vec![1.0]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let r = AttentionRecord::new(1, 1, 2, vec![0.5; 4]);
        assert!(matches!(
            aggregate_attention(&r, &[0], 1),
            Err(FgttError::Aggregation(_))
        ));
        assert!(aggregate_attention(&r, &[0, 1], 0).is_err());
    }

    #[test]
    fn select_and_extend() {
        let mut r = AttentionRecord::new(1, 1, 2, vec![0.1, 0.9, 0.2, 0.8]);
        r.extend(AttentionRecord::new(1, 1, 2, vec![0.3, 0.7, 0.4, 0.6]));
        assert_eq!(r.batch(), 2);
        assert_eq!(r.select(&[1]).weights(), &[0.3, 0.7, 0.4, 0.6]);
    }
}
