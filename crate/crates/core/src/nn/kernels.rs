//! Forward (and adjoint) kernels over plain [`Tensor`]s.
//!
//! Everything accumulates in `f64`. The tape in [`super::tape`] records calls
//! to these functions and replays the matching adjoints.

use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Silu,
    Sigmoid,
    Softplus,
    Tanh,
    Exp,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Exp => x.exp(),
        }
    }

    /// Derivative at `x`, given `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
                    + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => 1.0 - y * y,
            Activation::Exp => y,
        }
    }
}

/// `a · b` for matrices `[m×k]·[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err!("matmul {:?} x {:?}", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` for matrices `[m×k]·[n×k]ᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(shape_err!("matmul_bt {:?} x {:?}ᵀ", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &bd[j * k..(j + 1) * k];
            out[i * n + j] = dot(ar, br);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[k×n] += aᵀ · g where a is [m×k] and g is [m×n]
fn gemm_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · bᵀ where b is [k×n]
fn gemm_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// Affine map `y = x·W + b` over the last axis of `x`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if w.rank() != 2 || x.cols() != w.shape()[0] {
        return Err(shape_err!("linear input {:?} weight {:?}", x.shape(), w.shape()));
    }
    let (rows, inp, out) = (x.rows(), w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; rows * out];
    if let Some(b) = b {
        if b.numel() != out {
            return Err(shape_err!("linear bias {:?} for {} outputs", b.shape(), out));
        }
        for r in 0..rows {
            y[r * out..(r + 1) * out].copy_from_slice(b.data());
        }
    }
    gemm_acc(x.data(), w.data(), &mut y, rows, inp, out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out;
    Ok(Tensor::from_parts(shape, y))
}

pub(crate) fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    gx: Option<&mut Tensor>,
    gw: Option<&mut Tensor>,
    gb: Option<&mut Tensor>,
) {
    let (rows, inp, out) = (x.rows(), w.shape()[0], w.shape()[1]);
    if let Some(gx) = gx {
        gemm_bt_acc(gy.data(), w.data(), gx.data_mut(), rows, inp, out);
    }
    if let Some(gw) = gw {
        gemm_at_acc(x.data(), gy.data(), gw.data_mut(), rows, inp, out);
    }
    if let Some(gb) = gb {
        let gbd = gb.data_mut();
        for r in 0..rows {
            for (g, v) in gbd.iter_mut().zip(gy.row(r)) {
                *g += v;
            }
        }
    }
}

pub(crate) fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    gy: &Tensor,
    ga: Option<&mut Tensor>,
    gb: Option<&mut Tensor>,
) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if let Some(ga) = ga {
        gemm_bt_acc(gy.data(), b.data(), ga.data_mut(), m, k, n);
    }
    if let Some(gb) = gb {
        gemm_at_acc(a.data(), gy.data(), gb.data_mut(), m, k, n);
    }
}

pub(crate) fn matmul_bt_backward(
    a: &Tensor,
    b: &Tensor,
    gy: &Tensor,
    ga: Option<&mut Tensor>,
    gb: Option<&mut Tensor>,
) {
    // y[m×n] = a[m×k]·b[n×k]ᵀ ; ga = gy·b ; gb = gyᵀ·a
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    if let Some(ga) = ga {
        gemm_acc(gy.data(), b.data(), ga.data_mut(), m, n, k);
    }
    if let Some(gb) = gb {
        gemm_at_acc(gy.data(), a.data(), gb.data_mut(), m, n, k);
    }
}

/// Geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            dilation: 1,
        }
    }

    pub fn dilated(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn out_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(invalid!("conv stride and dilation must be >= 1"));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if kernel == 0 || padded < span {
            return Err(shape_err!(
                "conv kernel span {} exceeds padded length {}",
                span,
                padded
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// Output positions `t` for which tap `k` lands inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let offset = (k * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        // t*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // t*s + offset <= len-1
        let hi_num = len as isize - 1 - offset;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo as usize;
        let hi = ((hi + 1).max(0) as usize).min(out_len);
        lo.min(hi)..hi
    }
}

/// Row `x` split by stride phase: `buf[r·n + j] = x[j·s + r]`, zero past the end.
fn phase_split(x: &[f64], s: usize) -> (Vec<f64>, usize) {
    let n = x.len().div_ceil(s);
    let mut buf = vec![0.0; s * n];
    for (i, v) in x.iter().enumerate() {
        buf[(i % s) * n + i / s] = *v;
    }
    (buf, n)
}

/// Phase and offset so that input index `t·s + base` is `phase[t + shift]`.
fn tap_phase(base: isize, s: usize) -> (usize, isize) {
    let s = s as isize;
    (base.rem_euclid(s) as usize, base.div_euclid(s))
}

/// Cross-correlation of `x [C_in×L]` with `w [C_out×C_in×K]`.
pub fn conv1d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, geom: ConvGeom) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 3 || w.shape()[1] != x.shape()[0] {
        return Err(shape_err!("conv1d input {:?} kernels {:?}", x.shape(), w.shape()));
    }
    let (cin, len) = (x.shape()[0], x.shape()[1]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let lout = geom.out_len(len, k)?;
    let mut y = vec![0.0; cout * lout];
    if let Some(b) = b {
        if b.numel() != cout {
            return Err(shape_err!("conv1d bias {:?} for {} channels", b.shape(), cout));
        }
        for o in 0..cout {
            y[o * lout..(o + 1) * lout].fill(b.data()[o]);
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let s = geom.stride;
    let split: Vec<_> = (0..cin).map(|c| phase_split(&xd[c * len..(c + 1) * len], s)).collect();
    let taps: Vec<_> = (0..k)
        .map(|kk| {
            let base = (kk * geom.dilation) as isize - geom.padding as isize;
            (geom.valid_range(kk, len, lout), tap_phase(base, s))
        })
        .collect();
    for o in 0..cout {
        let yrow = &mut y[o * lout..(o + 1) * lout];
        for (c, (buf, n)) in split.iter().enumerate() {
            for (kk, (range, (r, shift))) in taps.iter().enumerate() {
                let wv = wd[(o * cin + c) * k + kk];
                if wv == 0.0 || range.is_empty() {
                    continue;
                }
                let lo = r * n + (range.start as isize + shift) as usize;
                let src = &buf[lo..lo + range.len()];
                for (yv, xv) in yrow[range.clone()].iter_mut().zip(src) {
                    *yv += wv * xv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![cout, lout], y))
}

pub(crate) fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    geom: ConvGeom,
    gy: &Tensor,
    gx: Option<&mut Tensor>,
    gw: Option<&mut Tensor>,
    gb: Option<&mut Tensor>,
) {
    let (cin, len) = (x.shape()[0], x.shape()[1]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let lout = gy.shape()[1];
    let (xd, wd, gyd) = (x.data(), w.data(), gy.data());
    let s = geom.stride;
    if let Some(gb) = gb {
        for o in 0..cout {
            gb.data_mut()[o] += gyd[o * lout..(o + 1) * lout].iter().sum::<f64>();
        }
    }
    let taps: Vec<_> = (0..k)
        .map(|kk| {
            let base = (kk * geom.dilation) as isize - geom.padding as isize;
            (geom.valid_range(kk, len, lout), tap_phase(base, s))
        })
        .collect();
    let n = len.div_ceil(s);
    if let Some(gw) = gw {
        let gwd = gw.data_mut();
        let split: Vec<_> = (0..cin).map(|c| phase_split(&xd[c * len..(c + 1) * len], s).0).collect();
        for o in 0..cout {
            let grow = &gyd[o * lout..(o + 1) * lout];
            for (c, buf) in split.iter().enumerate() {
                for (kk, (range, (r, shift))) in taps.iter().enumerate() {
                    if range.is_empty() {
                        continue;
                    }
                    let lo = r * n + (range.start as isize + shift) as usize;
                    gwd[(o * cin + c) * k + kk] += dot(&grow[range.clone()], &buf[lo..lo + range.len()]);
                }
            }
        }
    }
    if let Some(gx) = gx {
        let gxd = gx.data_mut();
        let mut acc = vec![0.0; s * n];
        for c in 0..cin {
            acc.fill(0.0);
            for o in 0..cout {
                let grow = &gyd[o * lout..(o + 1) * lout];
                for (kk, (range, (r, shift))) in taps.iter().enumerate() {
                    let wv = wd[(o * cin + c) * k + kk];
                    if wv == 0.0 || range.is_empty() {
                        continue;
                    }
                    let lo = r * n + (range.start as isize + shift) as usize;
                    for (a, g) in acc[lo..lo + range.len()].iter_mut().zip(&grow[range.clone()]) {
                        *a += wv * g;
                    }
                }
            }
            for (i, g) in gxd[c * len..(c + 1) * len].iter_mut().enumerate() {
                *g += acc[(i % s) * n + i / s];
            }
        }
    }
}

/// Causal depthwise convolution along the time axis of `x [T×C]` with
/// `w [C×K]`: `y[t,c] = b[c] + Σ_k w[c,k]·x[t−K+1+k, c]`, zero-padded on the left.
pub fn depthwise_causal_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || w.shape()[0] != x.shape()[1] {
        return Err(shape_err!(
            "depthwise conv input {:?} kernels {:?}",
            x.shape(),
            w.shape()
        ));
    }
    let (t_len, ch) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let mut y = vec![0.0; t_len * ch];
    for t in 0..t_len {
        for c in 0..ch {
            let mut acc = b.map_or(0.0, |b| b.data()[c]);
            for kk in 0..k {
                let src = t as isize - (k - 1) as isize + kk as isize;
                if src >= 0 {
                    acc += w.data()[c * k + kk] * x.data()[src as usize * ch + c];
                }
            }
            y[t * ch + c] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![t_len, ch], y))
}

pub(crate) fn depthwise_causal_conv_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    mut gx: Option<&mut Tensor>,
    mut gw: Option<&mut Tensor>,
    mut gb: Option<&mut Tensor>,
) {
    let (t_len, ch) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    for t in 0..t_len {
        for c in 0..ch {
            let g = gy.data()[t * ch + c];
            if let Some(gb) = gb.as_deref_mut() {
                gb.data_mut()[c] += g;
            }
            for kk in 0..k {
                let src = t as isize - (k - 1) as isize + kk as isize;
                if src < 0 {
                    continue;
                }
                let si = src as usize * ch + c;
                if let Some(gw) = gw.as_deref_mut() {
                    gw.data_mut()[c * k + kk] += g * x.data()[si];
                }
                if let Some(gx) = gx.as_deref_mut() {
                    gx.data_mut()[si] += g * w.data()[c * k + kk];
                }
            }
        }
    }
}

/// Max pooling over the last axis of `x [C×L]`; padded positions never win.
/// Returns the pooled tensor and the source index of each output.
pub fn max_pool1d(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<usize>)> {
    if x.rank() != 2 {
        return Err(shape_err!("max_pool1d needs [C×L], got {:?}", x.shape()));
    }
    if 2 * padding > kernel {
        return Err(invalid!("max_pool1d padding {} exceeds half kernel {}", padding, kernel));
    }
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    let lout = ConvGeom::new(stride, padding).out_len(len, kernel)?;
    let mut y = Vec::with_capacity(ch * lout);
    let mut arg = Vec::with_capacity(ch * lout);
    for c in 0..ch {
        let row = x.row(c);
        for t in 0..lout {
            let start = (t * stride) as isize - padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + kernel as isize) as usize).min(len);
            let mut best = lo;
            for i in lo..hi {
                if row[i] > row[best] {
                    best = i;
                }
            }
            y.push(row[best]);
            arg.push(c * len + best);
        }
    }
    Ok((Tensor::from_parts(vec![ch, lout], y), arg))
}

/// Row-wise softmax over the last axis, max-shifted.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    if cols == 0 {
        return out;
    }
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Normalized rows and the reciprocal standard deviation of each.
pub(crate) struct NormStats {
    pub xhat: Tensor,
    pub rstd: Vec<f64>,
}

/// Layer normalization over the last axis with population variance.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_stats(x, gamma, beta, eps)?.0)
}

pub(crate) fn layer_norm_stats(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let d = x.cols();
    if d == 0 || gamma.numel() != d || beta.numel() != d {
        return Err(shape_err!(
            "layer_norm input {:?} gamma {:?} beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        ));
    }
    if eps <= 0.0 {
        return Err(invalid!("layer_norm eps must be positive"));
    }
    let mut xhat = x.clone();
    let mut y = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for v in xh.iter_mut() {
            *v = (*v - mean) * rs;
        }
        let yr = y.row_mut(r);
        for i in 0..d {
            yr[i] = xhat.row(r)[i] * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok((y, NormStats { xhat, rstd }))
}

/// Sequential selective scan with diagonal state.
///
/// Shapes: `x, delta [T×D]`, `a [D×N]`, `b, c [T×N]`. For each channel `d`
/// and state `n`:
///
/// ```text
/// h_t[d,n] = exp(Δ_t[d]·A[d,n])·h_{t−1}[d,n] + Δ_t[d]·B_t[n]·x_t[d]
/// y_t[d]   = Σ_n C_t[n]·h_t[d,n]
/// ```
///
/// with `h_0 = 0`. Returns `y` and every state `h_t` (flattened `[T×D×N]`).
pub fn selective_scan(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    if x.rank() != 2 || delta.shape() != x.shape() {
        return Err(shape_err!("scan x {:?} delta {:?}", x.shape(), delta.shape()));
    }
    let (t_len, d) = (x.shape()[0], x.shape()[1]);
    if a.rank() != 2 || a.shape()[0] != d {
        return Err(shape_err!("scan A {:?} for {} channels", a.shape(), d));
    }
    let n = a.shape()[1];
    if b.shape() != [t_len, n] || c.shape() != [t_len, n] {
        return Err(shape_err!(
            "scan B {:?} C {:?}, expected [{}, {}]",
            b.shape(),
            c.shape(),
            t_len,
            n
        ));
    }
    let mut states = vec![0.0; t_len * d * n];
    let mut y = vec![0.0; t_len * d];
    let mut h = vec![0.0; d * n];
    for t in 0..t_len {
        let bt = b.row(t);
        let ct = c.row(t);
        for ch in 0..d {
            let dt = delta.data()[t * d + ch];
            let xv = x.data()[t * d + ch];
            let hrow = &mut h[ch * n..(ch + 1) * n];
            let arow = a.row(ch);
            let mut acc = 0.0;
            for s in 0..n {
                hrow[s] = (dt * arow[s]).exp() * hrow[s] + dt * bt[s] * xv;
                acc += ct[s] * hrow[s];
            }
            y[t * d + ch] = acc;
        }
        states[t * d * n..(t + 1) * d * n].copy_from_slice(&h);
    }
    Ok((Tensor::from_parts(vec![t_len, d], y), states))
}

pub(crate) struct ScanGrads<'a> {
    pub x: Option<&'a mut Tensor>,
    pub delta: Option<&'a mut Tensor>,
    pub a: Option<&'a mut Tensor>,
    pub b: Option<&'a mut Tensor>,
    pub c: Option<&'a mut Tensor>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn selective_scan_backward(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    states: &[f64],
    gy: &Tensor,
    mut g: ScanGrads<'_>,
) {
    let (t_len, d) = (x.shape()[0], x.shape()[1]);
    let n = a.shape()[1];
    // carry[d,n] holds ∂L/∂h_t accumulated from later steps
    let mut carry = vec![0.0; d * n];
    for t in (0..t_len).rev() {
        let h_t = &states[t * d * n..(t + 1) * d * n];
        let bt = b.row(t);
        let ct = c.row(t);
        for ch in 0..d {
            let gyv = gy.data()[t * d + ch];
            let dt = delta.data()[t * d + ch];
            let xv = x.data()[t * d + ch];
            let arow = a.row(ch);
            let mut g_delta = 0.0;
            let mut g_x = 0.0;
            for s in 0..n {
                let idx = ch * n + s;
                if let Some(gc) = g.c.as_deref_mut() {
                    gc.data_mut()[t * n + s] += gyv * h_t[idx];
                }
                let gh = gyv * ct[s] + carry[idx];
                let decay = (dt * arow[s]).exp();
                let h_prev = if t > 0 {
                    states[(t - 1) * d * n + idx]
                } else {
                    0.0
                };
                let g_decay = gh * h_prev;
                g_delta += g_decay * decay * arow[s] + gh * bt[s] * xv;
                if let Some(ga) = g.a.as_deref_mut() {
                    ga.data_mut()[idx] += g_decay * decay * dt;
                }
                if let Some(gb) = g.b.as_deref_mut() {
                    gb.data_mut()[t * n + s] += gh * dt * xv;
                }
                g_x += gh * dt * bt[s];
                carry[idx] = gh * decay;
            }
            if let Some(gd) = g.delta.as_deref_mut() {
                gd.data_mut()[t * d + ch] += g_delta;
            }
            if let Some(gx) = g.x.as_deref_mut() {
                gx.data_mut()[t * d + ch] += g_x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_valid_range_matches_bruteforce() {
        for &(len, k, s, p, dil) in &[(10, 3, 1, 1, 1), (16, 5, 2, 2, 1), (7, 3, 3, 0, 2), (5, 5, 1, 4, 1)] {
            let geom = ConvGeom::new(s, p).dilated(dil);
            let lout = geom.out_len(len, k).unwrap();
            for kk in 0..k {
                let r = geom.valid_range(kk, len, lout);
                for t in 0..lout {
                    let idx = (t * s) as isize + (kk * dil) as isize - p as isize;
                    let inside = idx >= 0 && (idx as usize) < len;
                    assert_eq!(r.contains(&t), inside, "len {len} k {k} kk {kk} t {t}");
                }
            }
        }
    }

    #[test]
    fn softmax_handles_large_magnitudes() {
        let x = Tensor::vector(vec![1000.0, 0.0]);
        let y = softmax(&x);
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-12);
    }

    #[test]
    fn max_pool_takes_first_maximum() {
        let x = Tensor::matrix(1, 4, vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let (y, arg) = max_pool1d(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0]);
        assert_eq!(arg, vec![1, 2]);
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Silu.apply(0.0), 0.0);
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Activation::Softplus.apply(100.0), 100.0);
    }
}
