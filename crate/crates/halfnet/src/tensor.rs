//! Minimal dense numeric arrays and the handful of operations the networks
//! need: matrix products, 2-D convolution, 2x2 max pooling, and elementwise
//! activations. Everything is `f64` and row-major.

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim("Tensor::new", format!("zero extent in {shape:?}")));
        }
        if data.len() != expected {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// 1-D tensor from a plain vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret as a different shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::dim(
                "Tensor::reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

/// out[i] = sum_j W[i,j] * x[j]
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.shape().len() != 1 || w.shape()[1] != x.shape()[0] {
        return Err(Error::dim(
            "matvec",
            format!("W is {:?}, x is {:?}", w.shape(), x.shape()),
        ));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let xv = x.data();
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w.data()[i * n..(i + 1) * n], xv);
    }
    Tensor::new(vec![m], out)
}

/// out[b,h] = sum_j X[b,j] * W[h,j], i.e. X * W^T for row-major X (B x d) and W (H x d).
///
/// Batched counterpart of [`matvec`]; blocked over the batch so each W row is
/// streamed once per block rather than once per instance.
pub fn matmul_xt(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[1] {
        return Err(Error::dim(
            "matmul_xt",
            format!("X is {:?}, W is {:?}", x.shape(), w.shape()),
        ));
    }
    let (b, d) = (x.shape()[0], x.shape()[1]);
    let h = w.shape()[0];
    let mut out = vec![0.0; b * h];
    const BLK: usize = 4;
    let mut b0 = 0;
    while b0 < b {
        let bn = (b0 + BLK).min(b);
        for hi in 0..h {
            let wr = &w.data()[hi * d..(hi + 1) * d];
            for bi in b0..bn {
                out[bi * h + hi] = dot(&x.data()[bi * d..(bi + 1) * d], wr);
            }
        }
        b0 = bn;
    }
    Tensor::new(vec![b, h], out)
}

/// Dot product with four independent accumulators (helps the autovectorizer).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Zero-padded 2-D cross-correlation.
///
/// input: C x Hin x Win, filters: F x C x kh x kw, bias: one value per filter,
/// output: F x Hout x Wout with Hout = Hin + 2*pad - kh + 1.
pub fn conv2d(input: &Tensor, filters: &Tensor, bias: &Tensor, pad: usize) -> Result<Tensor> {
    let is = input.shape();
    let fs = filters.shape();
    if is.len() != 3 || fs.len() != 4 || bias.shape().len() != 1 {
        return Err(Error::dim(
            "conv2d",
            format!("input {is:?}, filters {fs:?}, bias {:?}", bias.shape()),
        ));
    }
    let (c, hin, win) = (is[0], is[1], is[2]);
    let (f, fc, kh, kw) = (fs[0], fs[1], fs[2], fs[3]);
    if fc != c || bias.len() != f {
        return Err(Error::dim(
            "conv2d",
            format!("filters {fs:?} do not match input channels {c} / bias {}", bias.len()),
        ));
    }
    if kh > hin + 2 * pad || kw > win + 2 * pad {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {}x{}", hin + 2 * pad, win + 2 * pad),
        ));
    }
    let hout = hin + 2 * pad - kh + 1;
    let wout = win + 2 * pad - kw + 1;
    let mut out = vec![0.0; f * hout * wout];
    for fi in 0..f {
        let b = bias.data()[fi];
        for oh in 0..hout {
            for ow in 0..wout {
                let mut acc = b;
                for ci in 0..c {
                    for ki in 0..kh {
                        // input row index before padding offset
                        let ih = oh + ki;
                        if ih < pad || ih >= hin + pad {
                            continue;
                        }
                        let ih = ih - pad;
                        let frow = &filters.data()
                            [((fi * c + ci) * kh + ki) * kw..((fi * c + ci) * kh + ki + 1) * kw];
                        let irow = &input.data()[(ci * hin + ih) * win..(ci * hin + ih + 1) * win];
                        for (kj, &fv) in frow.iter().enumerate() {
                            let iw = ow + kj;
                            if iw < pad || iw >= win + pad {
                                continue;
                            }
                            acc += fv * irow[iw - pad];
                        }
                    }
                }
                out[(fi * hout + oh) * wout + ow] = acc;
            }
        }
    }
    Tensor::new(vec![f, hout, wout], out)
}

/// Which input cell won each 2x2 pooling window, as flat input indices.
#[derive(Debug, Clone)]
pub struct PoolArgmax {
    pub input_shape: Vec<usize>,
    pub winners: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling. Ties go to the first cell in row-major
/// window order; odd trailing rows/columns are truncated.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolArgmax)> {
    let is = input.shape();
    if is.len() != 3 || is[1] < 2 || is[2] < 2 {
        return Err(Error::dim("maxpool2", format!("input {is:?} must be C x H x W with H, W >= 2")));
    }
    let (c, h, w) = (is[0], is[1], is[2]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    let mut winners = vec![0usize; c * ho * wo];
    for ci in 0..c {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best_idx = (ci * h + 2 * oh) * w + 2 * ow;
                let mut best = input.data()[best_idx];
                for di in 0..2 {
                    for dj in 0..2 {
                        let idx = (ci * h + 2 * oh + di) * w + 2 * ow + dj;
                        let v = input.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let o = (ci * ho + oh) * wo + ow;
                out[o] = best;
                winners[o] = best_idx;
            }
        }
    }
    Ok((
        Tensor::new(vec![c, ho, wo], out)?,
        PoolArgmax { input_shape: is.to_vec(), winners },
    ))
}

/// Scatter pooled gradients back to the winning input cells.
pub fn maxpool2_backward(record: &PoolArgmax, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != record.winners.len() {
        return Err(Error::Internal(format!(
            "stale pooling cache: {} winners vs {} gradients",
            record.winners.len(),
            grad_out.len()
        )));
    }
    let mut grad_in = Tensor::zeros(record.input_shape.clone());
    for (&win, &g) in record.winners.iter().zip(grad_out.iter()) {
        grad_in.data_mut()[win] += g;
    }
    Ok(grad_in)
}

/// Elementwise / vector activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn apply(&self, v: &Tensor) -> Tensor {
        let mut out = v.clone();
        self.apply_in_place(out.data_mut());
        out
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        match self {
            Activation::Relu => {
                for x in v.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for x in v.iter_mut() {
                    *x = sigmoid(*x);
                }
            }
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(v),
        }
    }

    /// Derivative with respect to the pre-activation, evaluated elementwise.
    /// Not defined for softmax, whose Jacobian is not diagonal; callers fold
    /// softmax into the cross-entropy gradient instead.
    pub fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
            Activation::Softmax => panic!("softmax has no elementwise derivative"),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shift-normalized softmax: subtracts the max before exponentiation.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
