use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionRecord;
use super::partition::{check_permutation, GroupPartition};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::NUM_CLASSES;
use crate::error::{FgttError, Result};
use crate::train::loss::FocalLossParams;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Rows per tape when predicting; bounds memory on large inputs.
const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgttConfig {
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout_rate: f64,
    pub projector_hidden: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for FgttConfig {
    fn default() -> Self {
        FgttConfig {
            hidden_dim: 64,
            ffn_dim: 64,
            n_heads: 4,
            n_layers: 3,
            dropout_rate: 0.2,
            projector_hidden: 64,
            seed: 0,
        }
    }
}

impl FgttConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.ffn_dim == 0 || self.n_heads == 0 || self.projector_hidden == 0 {
            return Err(FgttError::Config(
                "model dimensions and head count must be positive".into(),
            ));
        }
        if !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(FgttError::Config(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(FgttError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

// Parameters of one encoder layer, in storage order.
const LAYER_PARAMS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
    "ln2_gain", "ln2_bias",
];

/// Feature Group Tabular Transformer.
///
/// Parameters are kept in one ordered list:
/// CLS token; per group (proj1_w, proj1_b, proj2_w, proj2_b); per encoder
/// layer the sixteen tensors of `LAYER_PARAMS`; then head1_w, head1_b,
/// head2_w, head2_b. Weights are stored `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FgttModel {
    config: FgttConfig,
    partition: GroupPartition,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Handles into a tape built by [`FgttModel::build`].
struct Graph {
    params: Vec<Var>,
    last_attention: Option<Var>,
    probs: Var,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
}

impl FgttModel {
    pub fn new(config: FgttConfig, partition: GroupPartition) -> Result<Self> {
        config.validate()?;
        partition.validate()?;
        if partition.is_empty() {
            return Err(FgttError::Partition("model needs at least one group".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, ph, f) = (config.hidden_dim, config.projector_hidden, config.ffn_dim);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, t: Tensor| {
            names.push(name);
            params.push(t);
        };
        add("cls".into(), Tensor::zeros(vec![d]));
        for (g, cols) in &partition.groups {
            add(format!("proj.{g}.w1"), glorot(&mut rng, cols.len(), ph));
            add(format!("proj.{g}.b1"), Tensor::zeros(vec![ph]));
            add(format!("proj.{g}.w2"), glorot(&mut rng, ph, d));
            add(format!("proj.{g}.b2"), Tensor::zeros(vec![d]));
        }
        for l in 0..config.n_layers {
            for name in LAYER_PARAMS {
                let t = match name {
                    "wq" | "wk" | "wv" | "wo" => glorot(&mut rng, d, d),
                    "ff1_w" => glorot(&mut rng, d, f),
                    "ff1_b" => Tensor::zeros(vec![f]),
                    "ff2_w" => glorot(&mut rng, f, d),
                    "ln1_gain" | "ln2_gain" => Tensor::filled(vec![d], 1.0),
                    _ => Tensor::zeros(vec![d]),
                };
                add(format!("layer{l}.{name}"), t);
            }
        }
        add("head.w1".into(), glorot(&mut rng, d, f));
        add("head.b1".into(), Tensor::zeros(vec![f]));
        add("head.w2".into(), glorot(&mut rng, f, NUM_CLASSES));
        add("head.b2".into(), Tensor::zeros(vec![NUM_CLASSES]));
        Ok(FgttModel {
            config,
            partition,
            names,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(config: FgttConfig, partition: GroupPartition, params: Vec<Tensor>) -> Result<Self> {
        let mut m = FgttModel::new(config, partition)?;
        if params.len() != m.params.len() {
            return Err(FgttError::Shape(format!(
                "expected {} parameter tensors, got {}",
                m.params.len(),
                params.len()
            )));
        }
        for ((name, have), want) in m.names.iter().zip(&params).zip(&m.params) {
            if have.shape() != want.shape() {
                return Err(FgttError::Shape(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &FgttConfig {
        &self.config
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn input_width(&self) -> usize {
        self.partition.width()
    }

    /// Sequence length: one token per group plus CLS.
    pub fn seq_len(&self) -> usize {
        self.partition.len() + 1
    }

    fn group_offset(&self, g: usize) -> usize {
        1 + 4 * g
    }

    fn layer_offset(&self, l: usize) -> usize {
        1 + 4 * self.partition.len() + LAYER_PARAMS.len() * l
    }

    fn head_offset(&self) -> usize {
        self.layer_offset(self.config.n_layers)
    }

    /// The same function with group tokens presented in `order`. Projector
    /// parameters move with their groups.
    pub fn with_group_order(&self, order: &[usize]) -> Result<FgttModel> {
        check_permutation(order, self.partition.len())?;
        let mut out = self.clone();
        out.partition = self.partition.reordered(order)?;
        for (new_pos, &old) in order.iter().enumerate() {
            for k in 0..4 {
                out.params[self.group_offset(new_pos) + k] = self.params[self.group_offset(old) + k].clone();
                out.names[self.group_offset(new_pos) + k] = self.names[self.group_offset(old) + k].clone();
            }
        }
        Ok(out)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_width() {
            return Err(FgttError::Shape(format!(
                "input {:?} does not match model width {}",
                x.shape(),
                self.input_width()
            )));
        }
        Ok(())
    }

    fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn tokens(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let mut groups = Vec::with_capacity(self.partition.len());
        for (gi, (_, cols)) in self.partition.groups.iter().enumerate() {
            let o = self.group_offset(gi);
            let xg = tape.gather_cols(x, cols)?;
            let h = Self::linear(tape, xg, p[o], p[o + 1])?;
            let h = tape.relu(h);
            groups.push(Self::linear(tape, h, p[o + 2], p[o + 3])?);
        }
        tape.stack_tokens(p[0], &groups)
    }

    fn encoder<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &[Var],
        mut h: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Option<Var>)> {
        let c = &self.config;
        let seq = self.seq_len();
        let mut last = None;
        for l in 0..c.n_layers {
            let o = self.layer_offset(l);
            let q = Self::linear(tape, h, p[o], p[o + 1])?;
            let k = Self::linear(tape, h, p[o + 2], p[o + 3])?;
            let v = Self::linear(tape, h, p[o + 4], p[o + 5])?;
            let a = tape.attention(q, k, v, c.n_heads, seq)?;
            last = Some(a);
            let a = Self::linear(tape, a, p[o + 6], p[o + 7])?;
            let a = tape.dropout(a, c.dropout_rate, training, rng)?;
            let r = tape.add(h, a)?;
            h = tape.layer_norm(r, Some((p[o + 8], p[o + 9])), LAYER_NORM_EPS)?;
            let f = Self::linear(tape, h, p[o + 10], p[o + 11])?;
            let f = tape.relu(f);
            let f = Self::linear(tape, f, p[o + 12], p[o + 13])?;
            let f = tape.dropout(f, c.dropout_rate, training, rng)?;
            let r = tape.add(h, f)?;
            h = tape.layer_norm(r, Some((p[o + 14], p[o + 15])), LAYER_NORM_EPS)?;
        }
        Ok((h, last))
    }

    fn build<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Tensor],
        x: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<Graph> {
        self.check_input(x)?;
        let p: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let tokens = self.tokens(tape, &p, xv)?;
        let (encoded, last_attention) = self.encoder(tape, &p, tokens, training, rng)?;
        let cls = tape.select_token(encoded, self.seq_len(), 0)?;
        let o = self.head_offset();
        let h = Self::linear(tape, cls, p[o], p[o + 1])?;
        let h = tape.relu(h);
        let logits = Self::linear(tape, h, p[o + 2], p[o + 3])?;
        let probs = tape.softmax_rows(logits);
        Ok(Graph {
            params: p,
            last_attention,
            probs,
        })
    }

    fn attention_record(&self, tape: &Tape, g: &Graph) -> Option<AttentionRecord> {
        let w = tape.attention_weights(g.last_attention?)?;
        Some(AttentionRecord::new(
            w.shape()[0],
            self.config.n_heads,
            self.seq_len(),
            w.into_data(),
        ))
    }

    /// Token sequences before the encoder, `[b*(G+1) × hidden]`, CLS first in
    /// every example.
    pub fn project_tokens(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|t| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let t = self.tokens(&mut tape, &p, xv)?;
        Ok(tape.value(t).clone())
    }

    /// Runs the encoder stack on `[b*(G+1) × hidden]` tokens. The record is
    /// `None` only when there are no layers.
    pub fn encoder_forward<R: Rng + ?Sized>(
        &self,
        tokens: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor, Option<AttentionRecord>)> {
        let d = self.config.hidden_dim;
        if tokens.shape().len() != 2 || tokens.cols() != d || !tokens.rows().is_multiple_of(self.seq_len()) {
            return Err(FgttError::Shape(format!(
                "tokens {:?} are not [b*{} x {d}]",
                tokens.shape(),
                self.seq_len()
            )));
        }
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|t| tape.constant(t.clone())).collect();
        let tv = tape.constant(tokens.clone());
        let (h, last) = self.encoder(&mut tape, &p, tv, training, rng)?;
        let record = last
            .and_then(|a| tape.attention_weights(a))
            .map(|w| AttentionRecord::new(w.shape()[0], self.config.n_heads, self.seq_len(), w.into_data()));
        Ok((tape.value(h).clone(), record))
    }

    /// Class probabilities `[n × 3]` in evaluation mode.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.predict_with_attention(x)?.0)
    }

    /// Class probabilities and last-layer attention for every row.
    pub fn predict_with_attention(&self, x: &Tensor) -> Result<(Tensor, Option<AttentionRecord>)> {
        self.check_input(x)?;
        let n = x.rows();
        let mut probs = Vec::with_capacity(n * NUM_CLASSES);
        let mut record: Option<AttentionRecord> = None;
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let chunk = x.select_rows(&rows);
            let mut tape = Tape::new();
            let g = self.build(&mut tape, &self.params, &chunk, false, &mut unused_rng())?;
            probs.extend_from_slice(tape.value(g.probs).data());
            if let Some(r) = self.attention_record(&tape, &g) {
                match record.as_mut() {
                    Some(acc) => acc.extend(r),
                    None => record = Some(r),
                }
            }
            start = end;
        }
        Ok((Tensor::new(vec![n, NUM_CLASSES], probs)?, record))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }

    /// Loss and parameter gradients for one training batch, with dropout.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        targets: &[usize],
        loss: &FocalLossParams,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.loss_and_grads_with(&self.params, x, targets, loss, true, rng)
    }

    /// Same as [`FgttModel::loss_and_grads`] but deterministic (no dropout).
    pub fn loss_and_grads_eval(
        &self,
        x: &Tensor,
        targets: &[usize],
        loss: &FocalLossParams,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.loss_and_grads_with(&self.params, x, targets, loss, false, &mut unused_rng())
    }

    /// Evaluation-mode loss with substituted parameters.
    pub fn loss_with_params(
        &self,
        params: &[Tensor],
        x: &Tensor,
        targets: &[usize],
        loss: &FocalLossParams,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, params, x, false, &mut unused_rng())?;
        let l = tape.focal_loss(g.probs, targets, loss.gamma, &loss.alpha)?;
        Ok(tape.value(l).data()[0])
    }

    fn loss_and_grads_with<R: Rng + ?Sized>(
        &self,
        params: &[Tensor],
        x: &Tensor,
        targets: &[usize],
        loss: &FocalLossParams,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, params, x, training, rng)?;
        let l = tape.focal_loss(g.probs, targets, loss.gamma, &loss.alpha)?;
        let value = tape.value(l).data()[0];
        let mut grads = tape.backward(l)?;
        let out = g
            .params
            .iter()
            .zip(params)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        Ok((value, out))
    }
}

/// Evaluation mode never draws from it.
fn unused_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
