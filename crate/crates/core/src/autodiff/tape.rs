use rand::Rng;

use super::kernels::{self, AttentionDims};
use super::Tensor;
use crate::error::{FgttError, Result};
use crate::train::loss::{focal_term, focal_term_grad};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Scale(usize, f64),
    LayerNorm {
        x: usize,
        affine: Option<(usize, usize)>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    SoftmaxRows(usize),
    Sum(usize),
    GatherCols {
        x: usize,
        cols: Vec<usize>,
    },
    StackTokens {
        cls: usize,
        groups: Vec<usize>,
    },
    SelectToken {
        x: usize,
        seq: usize,
        pos: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        dims: AttentionDims,
        weights: Vec<f64>,
    },
    FocalLoss {
        probs: usize,
        targets: Vec<usize>,
        gamma: f64,
        alpha: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of forward operations, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended as ops execute, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mat_dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = mat_dims(self.value(a));
        let (k2, n) = mat_dims(self.value(b));
        if k != k2 {
            return Err(FgttError::Shape(format!(
                "matmul of {:?} by {:?}: inner dimensions differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut c = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut c,
            0.0,
        );
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a.0, b.0), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(FgttError::Shape(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a.0, b.0), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = mat_dims(self.value(x));
        if self.value(bias).len() != n {
            return Err(FgttError::Shape(format!(
                "bias {:?} for matrix {:?}",
                self.value(bias).shape(),
                self.value(x).shape()
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let rg = self.rg(&[x.0, bias.0]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddBias(x.0, bias.0), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Relu(x.0), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Scale(x.0, factor), rg)
    }

    /// Row-wise layer normalization with population variance, optionally
    /// followed by a learned per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(FgttError::Param(format!("layer norm epsilon must be > 0, got {eps}")));
        }
        let (m, n) = mat_dims(self.value(x));
        if let Some((g, b)) = affine {
            if self.value(g).len() != n || self.value(b).len() != n {
                return Err(FgttError::Shape(format!(
                    "layer norm affine parameters must have length {n}"
                )));
            }
        }
        let src = self.value(x).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                xhat[i * n + j] = (row[j] - mean) * is;
            }
        }
        let mut out = xhat.clone();
        let mut ids = vec![x.0];
        if let Some((g, b)) = affine {
            let gv = self.value(g).data();
            let bv = self.value(b).data();
            for row in out.chunks_mut(n) {
                for j in 0..n {
                    row[j] = row[j] * gv[j] + bv[j];
                }
            }
            ids.extend([g.0, b.0]);
        }
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x: x.0,
                affine: affine.map(|(g, b)| (g.0, b.0)),
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout: kept activations are scaled by `1/(1-rate)` in
    /// training mode; identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(FgttError::Param(format!("dropout rate must be in [0,1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Dropout { x: x.0, mask }, rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.cols();
        let mut data = t.data().to_vec();
        kernels::softmax_rows_inplace(&mut data, n);
        let t = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(&[x.0]);
        self.push(t, Op::SoftmaxRows(x.0), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    /// Selects the listed columns of a matrix, in order.
    pub fn gather_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = mat_dims(self.value(x));
        if cols.is_empty() {
            return Err(FgttError::Shape("gather of zero columns".into()));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(FgttError::Shape(format!("column {bad} out of range for width {n}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * cols.len());
        for i in 0..m {
            data.extend(cols.iter().map(|&c| src[i * n + c]));
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::new(vec![m, cols.len()], data)?,
            Op::GatherCols {
                x: x.0,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// Interleaves a shared leading token with per-group token matrices.
    ///
    /// `cls` has length `d`; each group is `[b × d]`. The output is
    /// `[b*(G+1) × d]` where example `i` occupies rows `i*(G+1)..`, with the
    /// shared token first.
    pub fn stack_tokens(&mut self, cls: Var, groups: &[Var]) -> Result<Var> {
        let d = self.value(cls).len();
        let b = groups
            .first()
            .map(|g| self.value(*g).rows())
            .ok_or_else(|| FgttError::Shape("no group tokens".into()))?;
        for g in groups {
            let (r, c) = mat_dims(self.value(*g));
            if r != b || c != d {
                return Err(FgttError::Shape(format!(
                    "group token {:?} does not match [{b} x {d}]",
                    self.value(*g).shape()
                )));
            }
        }
        let seq = groups.len() + 1;
        let mut data = vec![0.0; b * seq * d];
        let cv = self.value(cls).data();
        for i in 0..b {
            data[i * seq * d..i * seq * d + d].copy_from_slice(cv);
            for (gi, g) in groups.iter().enumerate() {
                let off = (i * seq + gi + 1) * d;
                data[off..off + d].copy_from_slice(self.value(*g).row(i));
            }
        }
        let mut ids = vec![cls.0];
        ids.extend(groups.iter().map(|g| g.0));
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor::new(vec![b * seq, d], data)?,
            Op::StackTokens {
                cls: cls.0,
                groups: groups.iter().map(|g| g.0).collect(),
            },
            rg,
        ))
    }

    /// Picks token `pos` of every `seq`-long example: `[b*seq × d] → [b × d]`.
    pub fn select_token(&mut self, x: Var, seq: usize, pos: usize) -> Result<Var> {
        let (m, d) = mat_dims(self.value(x));
        if seq == 0 || m % seq != 0 || pos >= seq {
            return Err(FgttError::Shape(format!(
                "cannot select token {pos} of {seq} from {m} rows"
            )));
        }
        let b = m / seq;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * d);
        for i in 0..b {
            let off = (i * seq + pos) * d;
            data.extend_from_slice(&src[off..off + d]);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::new(vec![b, d], data)?, Op::SelectToken { x: x.0, seq, pos }, rg))
    }

    /// Multi-head scaled dot-product attention over `seq`-long examples.
    ///
    /// The per-head weights of the result are available through
    /// [`Tape::attention_weights`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let (m, width) = mat_dims(self.value(q));
        if heads == 0 || width % heads != 0 {
            return Err(FgttError::Config(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        if self.value(k).shape() != self.value(q).shape() || self.value(v).shape() != self.value(q).shape() {
            return Err(FgttError::Shape("query, key and value shapes differ".into()));
        }
        if seq == 0 || m % seq != 0 {
            return Err(FgttError::Shape(format!(
                "{m} rows are not a multiple of sequence length {seq}"
            )));
        }
        let dims = AttentionDims {
            batch: m / seq,
            seq,
            width,
            heads,
        };
        let (out, weights) =
            kernels::attention_forward(self.value(q).data(), self.value(k).data(), self.value(v).data(), dims);
        let rg = self.rg(&[q.0, k.0, v.0]);
        Ok(self.push(
            Tensor::new(vec![m, width], out)?,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                dims,
                weights,
            },
            rg,
        ))
    }

    /// Attention weights `[batch × heads × seq × seq]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<Tensor> {
        match &self.nodes[v.0].op {
            Op::Attention { dims, weights, .. } => {
                Tensor::new(vec![dims.batch, dims.heads, dims.seq, dims.seq], weights.clone()).ok()
            }
            _ => None,
        }
    }

    /// Mean focal loss of probability rows against integer targets.
    pub fn focal_loss(&mut self, probs: Var, targets: &[usize], gamma: f64, alpha: &[f64]) -> Result<Var> {
        let (b, c) = mat_dims(self.value(probs));
        if targets.len() != b {
            return Err(FgttError::Contract(format!(
                "{} targets for {b} probability rows",
                targets.len()
            )));
        }
        if alpha.len() != c {
            return Err(FgttError::Contract(format!(
                "{} class weights for {c} classes",
                alpha.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(FgttError::Contract(format!(
                "target class {t} out of range for {c} classes"
            )));
        }
        let p = self.value(probs).data();
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| focal_term(p[i * c + t], gamma, alpha[t]))
            .sum();
        let rg = self.rg(&[probs.0]);
        Ok(self.push(
            Tensor::scalar(total / b as f64),
            Op::FocalLoss {
                probs: probs.0,
                targets: targets.to_vec(),
                gamma,
                alpha: alpha.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients of nodes reached along several paths are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(FgttError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = mat_dims(&self.nodes[*a].value);
                let n = self.nodes[*b].value.cols();
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                // dA = dC Bᵀ, dB = Aᵀ dC
                self.accumulate(grads, *a, |da| kernels::gemm(m, n, k, g, false, bv, true, da, 1.0));
                self.accumulate(grads, *b, |db| kernels::gemm(k, m, n, av, true, g, false, db, 1.0));
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    self.accumulate(grads, id, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddBias(x, bias) => {
                let n = self.nodes[*bias].value.len();
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                self.accumulate(grads, *bias, |d| {
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.nodes[*x].value.data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += f * b));
            }
            Op::LayerNorm {
                x,
                affine,
                xhat,
                inv_std,
            } => {
                let (m, n) = mat_dims(&node.value);
                // gradient with respect to the normalized values
                let mut dxhat = g.to_vec();
                if let Some((gain, bias)) = affine {
                    let gv = self.nodes[*gain].value.data();
                    for row in dxhat.chunks_mut(n) {
                        row.iter_mut().zip(gv).for_each(|(a, b)| *a *= b);
                    }
                    self.accumulate(grads, *gain, |d| {
                        for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                            for j in 0..n {
                                d[j] += gr[j] * xr[j];
                            }
                        }
                    });
                    self.accumulate(grads, *bias, |d| {
                        for gr in g.chunks(n) {
                            d.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                        }
                    });
                }
                self.accumulate(grads, *x, |d| {
                    for i in 0..m {
                        let dh = &dxhat[i * n..(i + 1) * n];
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_xh = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            d[i * n + j] += inv_std[i] * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * mask[i];
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                self.accumulate(grads, *x, |d| {
                    kernels::softmax_rows_backward(node.value.data(), g, d, n)
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::GatherCols { x, cols } => {
                let n = self.nodes[*x].value.cols();
                let w = cols.len();
                self.accumulate(grads, *x, |d| {
                    for (i, gr) in g.chunks(w).enumerate() {
                        for (j, &c) in cols.iter().enumerate() {
                            d[i * n + c] += gr[j];
                        }
                    }
                });
            }
            Op::StackTokens { cls, groups } => {
                let d = self.nodes[*cls].value.len();
                let seq = groups.len() + 1;
                let b = node.value.rows() / seq;
                self.accumulate(grads, *cls, |dc| {
                    for i in 0..b {
                        let off = i * seq * d;
                        dc.iter_mut().zip(&g[off..off + d]).for_each(|(a, v)| *a += v);
                    }
                });
                for (gi, &grp) in groups.iter().enumerate() {
                    self.accumulate(grads, grp, |dg| {
                        for i in 0..b {
                            let off = (i * seq + gi + 1) * d;
                            dg[i * d..(i + 1) * d]
                                .iter_mut()
                                .zip(&g[off..off + d])
                                .for_each(|(a, v)| *a += v);
                        }
                    });
                }
            }
            Op::SelectToken { x, seq, pos } => {
                let d = node.value.cols();
                self.accumulate(grads, *x, |dx| {
                    for (i, gr) in g.chunks(d).enumerate() {
                        let off = (i * seq + pos) * d;
                        dx[off..off + d].iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::Attention { q, k, v, dims, weights } => {
                let (dq, dk, dv) = kernels::attention_backward(
                    self.nodes[*q].value.data(),
                    self.nodes[*k].value.data(),
                    self.nodes[*v].value.data(),
                    weights,
                    g,
                    *dims,
                );
                for (id, src) in [(*q, dq), (*k, dk), (*v, dv)] {
                    self.accumulate(grads, id, |d| d.iter_mut().zip(&src).for_each(|(a, b)| *a += b));
                }
            }
            Op::FocalLoss {
                probs,
                targets,
                gamma,
                alpha,
            } => {
                let pv = self.nodes[*probs].value.data();
                let c = self.nodes[*probs].value.cols();
                let scale = g[0] / targets.len() as f64;
                self.accumulate(grads, *probs, |d| {
                    for (i, &t) in targets.iter().enumerate() {
                        d[i * c + t] += scale * focal_term_grad(pv[i * c + t], *gamma, alpha[t]);
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i = t.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let c = t.matmul(i, a).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = t.constant(m(&[&[1.0, 2.0]]));
        let col = t.constant(m(&[&[3.0], &[4.0]]));
        let d = t.matmul(r, col).unwrap();
        assert_eq!(t.value(d).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]]));
        let y = t.softmax_rows(x);
        let v = t.value(y).data();
        for j in 0..3 {
            assert!((v[j] - 1.0 / 3.0).abs() < 1e-12);
        }
        let expect = [0.09003, 0.24473, 0.66524];
        for j in 0..3 {
            assert!((v[3 + j] - expect[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn relu_layer_norm_dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);

        let y = t.constant(m(&[&[2.0, 4.0]]));
        let ln = t.layer_norm(y, None, 1e-5).unwrap();
        let v = t.value(ln).data();
        assert!((v[0] + 1.0).abs() < 1e-3 && (v[1] - 1.0).abs() < 1e-3);

        let z = t.constant(m(&[&[0.3, -1.7], &[2.5, 9.0]]));
        let dz = t.dropout(z, 0.2, false, &mut rng).unwrap();
        assert_eq!(t.value(dz), t.value(z));
        assert!(t.dropout(z, 1.0, true, &mut rng).is_err());
        assert!(t.layer_norm(z, None, 0.0).is_err());
    }

    #[test]
    fn dropout_scales_kept_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::filled(vec![1000], 1.0));
        let y = t.dropout(x, 0.2, true, &mut rng).unwrap();
        let kept: Vec<f64> = t.value(y).data().iter().copied().filter(|&v| v != 0.0).collect();
        assert!(kept.iter().all(|&v| (v - 1.25).abs() < 1e-12));
        let frac = kept.len() as f64 / 1000.0;
        assert!((frac - 0.8).abs() < 0.05, "{frac}");
    }

    #[test]
    fn backward_simple_examples() {
        let mut t = Tape::new();
        let x = t.param(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);

        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, -2.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let y = t.relu(x);
        assert!(matches!(t.backward(y), Err(FgttError::Contract(_))));
    }

    #[test]
    fn shared_subexpression_sums_paths() {
        // f = sum(relu(x) * 3 + relu(x) * 5) via a shared node vs two copies
        let xs = vec![0.5, -1.0, 2.0];
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(xs.clone()));
        let r = t.relu(x);
        let a = t.scale(r, 3.0);
        let b = t.scale(r, 5.0);
        let s = t.add(a, b).unwrap();
        let l = t.sum(s);
        let shared = t.backward(l).unwrap().get(x).unwrap().clone();

        let mut t = Tape::new();
        let x = t.param(Tensor::vector(xs));
        let r1 = t.relu(x);
        let r2 = t.relu(x);
        let a = t.scale(r1, 3.0);
        let b = t.scale(r2, 5.0);
        let s = t.add(a, b).unwrap();
        let l = t.sum(s);
        let dup = t.backward(l).unwrap().get(x).unwrap().clone();
        assert_eq!(shared, dup);
        assert_eq!(shared.data(), &[8.0, 0.0, 8.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![1.0]));
        let p = t.param(Tensor::vector(vec![2.0]));
        let y = t.mul(c, p).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0]);
    }
}
