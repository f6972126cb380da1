//! Raw slice kernels shared by the tape ops and by inference paths that do not
//! need gradients.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a` is stored row-major as `m×k`, or as `k×m` when `trans_a` is set; the
/// same holds for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the row-major buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// In-place numerically stable softmax of each `width`-long row.
pub fn softmax_rows_inplace(values: &mut [f64], width: usize) {
    for row in values.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward of row softmax: `dx = y ∘ (dy − rowsum(dy ∘ y))`, accumulated
/// into `dx`.
pub fn softmax_rows_backward(y: &[f64], dy: &[f64], dx: &mut [f64], width: usize) {
    for ((yr, dyr), dxr) in y.chunks(width).zip(dy.chunks(width)).zip(dx.chunks_mut(width)) {
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - dot);
        }
    }
}

/// Layout helper for multi-head attention over a batch of token sequences.
///
/// Inputs are `[batch*seq × width]` with example-major rows; head `h` owns
/// columns `h*head_dim..(h+1)*head_dim`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionDims {
    pub batch: usize,
    pub seq: usize,
    pub width: usize,
    pub heads: usize,
}

impl AttentionDims {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn gather_head(&self, src: &[f64], example: usize, head: usize, dst: &mut [f64]) {
        let hd = self.head_dim();
        for t in 0..self.seq {
            let row = (example * self.seq + t) * self.width + head * hd;
            dst[t * hd..(t + 1) * hd].copy_from_slice(&src[row..row + hd]);
        }
    }

    fn scatter_head_add(&self, src: &[f64], example: usize, head: usize, dst: &mut [f64]) {
        let hd = self.head_dim();
        for t in 0..self.seq {
            let row = (example * self.seq + t) * self.width + head * hd;
            for (d, s) in dst[row..row + hd].iter_mut().zip(&src[t * hd..(t + 1) * hd]) {
                *d += s;
            }
        }
    }

    fn weight_offset(&self, example: usize, head: usize) -> usize {
        (example * self.heads + head) * self.seq * self.seq
    }
}

/// Scaled dot-product attention per head: `softmax(Q Kᵀ / sqrt(d_k)) V`.
///
/// Returns the concatenated head outputs `[batch*seq × width]` and the
/// attention weights `[batch × heads × seq × seq]`.
pub fn attention_forward(q: &[f64], k: &[f64], v: &[f64], dims: AttentionDims) -> (Vec<f64>, Vec<f64>) {
    let hd = dims.head_dim();
    let s = dims.seq;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; dims.batch * s * dims.width];
    let mut weights = vec![0.0; dims.batch * dims.heads * s * s];
    let mut qh = vec![0.0; s * hd];
    let mut kh = vec![0.0; s * hd];
    let mut vh = vec![0.0; s * hd];
    let mut oh = vec![0.0; s * hd];
    for e in 0..dims.batch {
        for h in 0..dims.heads {
            dims.gather_head(q, e, h, &mut qh);
            dims.gather_head(k, e, h, &mut kh);
            dims.gather_head(v, e, h, &mut vh);
            let off = dims.weight_offset(e, h);
            let w = &mut weights[off..off + s * s];
            gemm(s, hd, s, &qh, false, &kh, true, w, 0.0);
            w.iter_mut().for_each(|x| *x *= scale);
            softmax_rows_inplace(w, s);
            gemm(s, s, hd, w, false, &vh, false, &mut oh, 0.0);
            dims.scatter_head_add(&oh, e, h, &mut out);
        }
    }
    (out, weights)
}

/// Gradients of [`attention_forward`] with respect to `q`, `k`, `v`.
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    weights: &[f64],
    d_out: &[f64],
    dims: AttentionDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = dims.head_dim();
    let s = dims.seq;
    let scale = 1.0 / (hd as f64).sqrt();
    let n = dims.batch * s * dims.width;
    let (mut dq, mut dk, mut dv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut qh = vec![0.0; s * hd];
    let mut kh = vec![0.0; s * hd];
    let mut vh = vec![0.0; s * hd];
    let mut doh = vec![0.0; s * hd];
    let mut dw = vec![0.0; s * s];
    let mut ds = vec![0.0; s * s];
    let mut tmp = vec![0.0; s * hd];
    for e in 0..dims.batch {
        for h in 0..dims.heads {
            dims.gather_head(q, e, h, &mut qh);
            dims.gather_head(k, e, h, &mut kh);
            dims.gather_head(v, e, h, &mut vh);
            dims.gather_head(d_out, e, h, &mut doh);
            let off = dims.weight_offset(e, h);
            let w = &weights[off..off + s * s];
            // dV = Wᵀ dO
            gemm(s, s, hd, w, true, &doh, false, &mut tmp, 0.0);
            dims.scatter_head_add(&tmp, e, h, &mut dv);
            // dW = dO Vᵀ, then through the softmax and the 1/sqrt(d_k) scale
            gemm(s, hd, s, &doh, false, &vh, true, &mut dw, 0.0);
            ds.iter_mut().for_each(|x| *x = 0.0);
            softmax_rows_backward(w, &dw, &mut ds, s);
            ds.iter_mut().for_each(|x| *x *= scale);
            // dQ = dS K, dK = dSᵀ Q
            gemm(s, s, hd, &ds, false, &kh, false, &mut tmp, 0.0);
            dims.scatter_head_add(&tmp, e, h, &mut dq);
            gemm(s, s, hd, &ds, true, &qh, false, &mut tmp, 0.0);
            dims.scatter_head_add(&tmp, e, h, &mut dk);
        }
    }
    (dq, dk, dv)
}
