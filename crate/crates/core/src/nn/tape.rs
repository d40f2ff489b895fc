//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records each kernel call as a node. Values live on the tape
//! except parameters, which are borrowed from the [`ParamStore`].
//! [`Tape::backward`] walks the nodes in reverse and returns per-parameter
//! gradients. Nodes that cannot reach a trainable parameter are skipped.

use super::kernels::{self, Activation, ConvGeom, ScanGrads};
use super::params::{Gradients, ParamId, ParamStore};
use super::rng::SeededRng;
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    MatMulBt { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, mul: f64 },
    ScaleBy { x: Var, s: Var },
    MulRows { x: Var, g: Var },
    AddRow { x: Var, b: Var },
    Act { x: Var, kind: Activation },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, rstd: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    MeanRows(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    DwConv { x: Var, w: Var, b: Option<Var> },
    MaxPool { x: Var, arg: Vec<usize> },
    ReverseRows(Var),
    Scan { x: Var, delta: Var, a: Var, b: Var, c: Var, states: Vec<f64> },
    FocalLoss { p: Var, targets: Vec<usize>, gamma: f64 },
    Mean(Var),
    Sum(Var),
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Probability floor inside the focal-loss logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    dropout_rng: Option<SeededRng>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            dropout_rng: None,
        }
    }

    /// Enables dropout masks drawn from `rng`. Without this, dropout is identity.
    pub fn with_dropout(mut self, rng: SeededRng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.tensor(*id),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name(&op).to_string()));
        }
        let needs_grad = inputs.iter().any(|v| self.needs(*v));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let frozen = self.store.get(id).frozen;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: !frozen,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(y, Op::Linear { x, w, b }, &ins)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::matmul(self.value(a), self.value(b))?;
        self.push(y, Op::MatMul { a, b }, &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::matmul_bt(self.value(a), self.value(b))?;
        self.push(y, Op::MatMulBt { a, b }, &[a, b])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{} of {:?} and {:?}",
                what,
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.zip_with(a, b, |x, y| x + y);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.zip_with(a, b, |x, y| x - y);
        self.push(y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.zip_with(a, b, |x, y| x * y);
        self.push(y, Op::Mul(a, b), &[a, b])
    }

    /// `mul·x + add`
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        let y = self.value(x).map(|v| mul * v + add);
        self.push(y, Op::Affine { x, mul }, &[x])
    }

    pub fn scale(&mut self, x: Var, mul: f64) -> Result<Var> {
        self.affine(x, mul, 0.0)
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err!("scale_by needs a scalar, got {:?}", self.value(s).shape()));
        }
        let sv = self.value(s).data()[0];
        let y = self.value(x).map(|v| v * sv);
        self.push(y, Op::ScaleBy { x, s }, &[x, s])
    }

    /// Scales row `r` of `x [R×C]` by `g[r]`.
    pub fn mul_rows(&mut self, x: Var, g: Var) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(g));
        if tg.numel() != tx.rows() {
            return Err(shape_err!("mul_rows {:?} by {:?}", tx.shape(), tg.shape()));
        }
        let mut y = tx.clone();
        for r in 0..tx.rows() {
            let gv = tg.data()[r];
            for v in y.row_mut(r) {
                *v *= gv;
            }
        }
        self.push(y, Op::MulRows { x, g }, &[x, g])
    }

    /// Adds vector `b [C]` to every row of `x [R×C]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.numel() != tx.cols() {
            return Err(shape_err!("add_row {:?} + {:?}", tx.shape(), tb.shape()));
        }
        let mut y = tx.clone();
        for r in 0..tx.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(tb.data()) {
                *v += bv;
            }
        }
        self.push(y, Op::AddRow { x, b }, &[x, b])
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = self.value(x).map(|v| kind.apply(v));
        self.push(y, Op::Act { x, kind }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = kernels::softmax(self.value(x));
        self.push(y, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, stats) =
            kernels::layer_norm_stats(self.value(x), self.value(gamma), self.value(beta), eps)?;
        self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: stats.xhat,
                rstd: stats.rstd,
            },
            &[x, gamma, beta],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).transpose()?;
        self.push(y, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push(y, Op::Reshape(x), &[x])
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = xs
            .first()
            .map(|v| self.value(*v).rows())
            .ok_or_else(|| invalid!("concat of nothing"))?;
        let mut cols = 0;
        for v in xs {
            let t = self.value(*v);
            if t.rank() != 2 || t.rows() != rows {
                return Err(shape_err!("concat_cols part {:?} with {} rows", t.shape(), rows));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in xs {
                data.extend_from_slice(self.value(*v).row(r));
            }
        }
        self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatCols(xs.to_vec()),
            xs,
        )
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let cols = xs
            .first()
            .map(|v| self.value(*v).cols())
            .ok_or_else(|| invalid!("concat of nothing"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for v in xs {
            let t = self.value(*v);
            if t.cols() != cols {
                return Err(shape_err!("concat_rows part {:?} with {} cols", t.shape(), cols));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(xs.to_vec()),
            xs,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.cols() {
            return Err(shape_err!("slice_cols {}..{} of {:?}", start, end, t.shape()));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let y = Tensor::from_parts(vec![t.rows(), end - start], data);
        self.push(y, Op::SliceCols { x, start }, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.rows() {
            return Err(shape_err!("slice_rows {}..{} of {:?}", start, end, t.shape()));
        }
        let c = t.cols();
        let y = Tensor::from_parts(vec![end - start, c], t.data()[start * c..end * c].to_vec());
        self.push(y, Op::SliceRows { x, start }, &[x])
    }

    /// Mean over rows of `x [R×C]`, giving `[C]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if r == 0 {
            return Err(shape_err!("mean over zero rows"));
        }
        let mut y = vec![0.0; c];
        for i in 0..r {
            for (a, b) in y.iter_mut().zip(t.row(i)) {
                *a += b;
            }
        }
        for v in &mut y {
            *v /= r as f64;
        }
        self.push(Tensor::vector(y), Op::MeanRows(x), &[x])
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = kernels::conv1d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(y, Op::Conv1d { x, w, b, geom }, &ins)
    }

    pub fn depthwise_causal_conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::depthwise_causal_conv(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
        )?;
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(y, Op::DwConv { x, w, b }, &ins)
    }

    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (y, arg) = kernels::max_pool1d(self.value(x), kernel, stride, padding)?;
        self.push(y, Op::MaxPool { x, arg }, &[x])
    }

    /// Reverses the row (time) order of a matrix.
    pub fn reverse_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let mut data = Vec::with_capacity(t.numel());
        for r in (0..t.rows()).rev() {
            data.extend_from_slice(t.row(r));
        }
        let y = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(y, Op::ReverseRows(x), &[x])
    }

    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let (y, states) = kernels::selective_scan(
            self.value(x),
            self.value(delta),
            self.value(a),
            self.value(b),
            self.value(c),
        )?;
        self.push(
            y,
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                states,
            },
            &[x, delta, a, b, c],
        )
    }

    /// Mean focal loss `−(1−p_t)^γ·ln(max(p_t, 1e−12))` over rows of a
    /// probability matrix.
    pub fn focal_loss(&mut self, p: Var, targets: &[usize], gamma: f64) -> Result<Var> {
        let t = self.value(p);
        if t.rank() != 2 || t.rows() != targets.len() || targets.is_empty() {
            return Err(shape_err!(
                "focal loss on {:?} with {} targets",
                t.shape(),
                targets.len()
            ));
        }
        let k = t.cols();
        if let Some(bad) = targets.iter().find(|&&c| c >= k) {
            return Err(invalid!("target class {} out of {} classes", bad, k));
        }
        let loss = focal_value(t, targets, gamma);
        self.push(
            Tensor::scalar(loss),
            Op::FocalLoss {
                p,
                targets: targets.to_vec(),
                gamma,
            },
            &[p],
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.sum() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Inverted dropout; identity when `rate == 0` or dropout is disabled on this tape.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid!("dropout rate {} outside [0, 1)", rate));
        }
        let Some(rng) = self.dropout_rng.as_mut().filter(|_| rate > 0.0) else {
            return Ok(x);
        };
        let n = self.nodes[x.0].value_len(self.store);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let y = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        );
        self.push(y, Op::Dropout { x, mask }, &[x])
    }

    /// Gradients of the scalar `loss` with respect to every reachable,
    /// non-frozen parameter in the store.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(shape_err!("backward from non-scalar {:?}", lt.shape()));
        }
        if !lt.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &gy, &mut grads, &mut out)?;
        }
        Ok(Gradients(out))
    }

    fn backprop_node(
        &self,
        i: usize,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut [Option<Tensor>],
    ) -> Result<()> {
        let y = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => match &mut out[id.0] {
                Some(g) => g.add_assign(gy),
                slot => *slot = Some(gy.clone()),
            },
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let mut gx = self.grad_buf(*x);
                let mut gw = self.grad_buf(*w);
                let mut gb = b.and_then(|b| self.grad_buf(b));
                kernels::linear_backward(tx, tw, gy, gx.as_mut(), gw.as_mut(), gb.as_mut());
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                if let Some(b) = b {
                    acc(grads, *b, gb);
                }
            }
            Op::MatMul { a, b } => {
                let mut ga = self.grad_buf(*a);
                let mut gb = self.grad_buf(*b);
                kernels::matmul_backward(self.value(*a), self.value(*b), gy, ga.as_mut(), gb.as_mut());
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::MatMulBt { a, b } => {
                let mut ga = self.grad_buf(*a);
                let mut gb = self.grad_buf(*b);
                kernels::matmul_bt_backward(self.value(*a), self.value(*b), gy, ga.as_mut(), gb.as_mut());
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, Some(gy.clone()));
                }
                if self.needs(*b) {
                    acc(grads, *b, Some(gy.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, Some(gy.clone()));
                }
                if self.needs(*b) {
                    acc(grads, *b, Some(gy.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let g = zip(gy, self.value(*b), |g, v| g * v);
                    acc(grads, *a, Some(g));
                }
                if self.needs(*b) {
                    let g = zip(gy, self.value(*a), |g, v| g * v);
                    acc(grads, *b, Some(g));
                }
            }
            Op::Affine { x, mul } => {
                let m = *mul;
                acc(grads, *x, Some(gy.map(|v| v * m)));
            }
            Op::ScaleBy { x, s } => {
                let sv = self.value(*s).data()[0];
                if self.needs(*x) {
                    acc(grads, *x, Some(gy.map(|v| v * sv)));
                }
                if self.needs(*s) {
                    let d: f64 = gy.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    let shape = self.value(*s).shape().to_vec();
                    acc(grads, *s, Some(Tensor::from_parts(shape, vec![d])));
                }
            }
            Op::MulRows { x, g } => {
                let (tx, tg) = (self.value(*x), self.value(*g));
                if self.needs(*x) {
                    let mut gx = gy.clone();
                    for r in 0..tx.rows() {
                        let gv = tg.data()[r];
                        for v in gx.row_mut(r) {
                            *v *= gv;
                        }
                    }
                    acc(grads, *x, Some(gx));
                }
                if self.needs(*g) {
                    let d: Vec<f64> = (0..tx.rows())
                        .map(|r| tx.row(r).iter().zip(gy.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(grads, *g, Some(Tensor::from_parts(tg.shape().to_vec(), d)));
                }
            }
            Op::AddRow { x, b } => {
                if self.needs(*x) {
                    acc(grads, *x, Some(gy.clone()));
                }
                if self.needs(*b) {
                    let tb = self.value(*b);
                    let mut gb = vec![0.0; tb.numel()];
                    for r in 0..gy.rows() {
                        for (a, v) in gb.iter_mut().zip(gy.row(r)) {
                            *a += v;
                        }
                    }
                    acc(grads, *b, Some(Tensor::from_parts(tb.shape().to_vec(), gb)));
                }
            }
            Op::Act { x, kind } => {
                let tx = self.value(*x);
                let g = Tensor::from_parts(
                    gy.shape().to_vec(),
                    gy.data()
                        .iter()
                        .zip(tx.data())
                        .zip(y.data())
                        .map(|((g, xv), yv)| g * kind.derivative(*xv, *yv))
                        .collect(),
                );
                acc(grads, *x, Some(g));
            }
            Op::Softmax(x) => {
                let mut gx = gy.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dotp: f64 = yr.iter().zip(gy.row(r)).map(|(a, b)| a * b).sum();
                    for (j, v) in gx.row_mut(r).iter_mut().enumerate() {
                        *v = yr[j] * (*v - dotp);
                    }
                }
                acc(grads, *x, Some(gx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let tg = self.value(*gamma);
                let d = xhat.cols();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for r in 0..xhat.rows() {
                        for j in 0..d {
                            gg[j] += gy.row(r)[j] * xhat.row(r)[j];
                            gb[j] += gy.row(r)[j];
                        }
                    }
                    if self.needs(*gamma) {
                        acc(grads, *gamma, Some(Tensor::from_parts(tg.shape().to_vec(), gg)));
                    }
                    if self.needs(*beta) {
                        let sh = self.value(*beta).shape().to_vec();
                        acc(grads, *beta, Some(Tensor::from_parts(sh, gb)));
                    }
                }
                if self.needs(*x) {
                    let mut gx = gy.clone();
                    let dn = d as f64;
                    for r in 0..xhat.rows() {
                        let xh = xhat.row(r);
                        let gxh: Vec<f64> = gy.row(r).iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                        let s1: f64 = gxh.iter().sum();
                        let s2: f64 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for (j, v) in gx.row_mut(r).iter_mut().enumerate() {
                            *v = rstd[r] / dn * (dn * gxh[j] - s1 - xh[j] * s2);
                        }
                    }
                    acc(grads, *x, Some(gx));
                }
            }
            Op::Transpose(x) => {
                acc(grads, *x, Some(gy.transpose()?));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(grads, *x, Some(gy.clone().reshape(&shape)?));
            }
            Op::ConcatCols(xs) => {
                let mut off = 0;
                for v in xs {
                    let c = self.value(*v).cols();
                    if self.needs(*v) {
                        let mut data = Vec::with_capacity(gy.rows() * c);
                        for r in 0..gy.rows() {
                            data.extend_from_slice(&gy.row(r)[off..off + c]);
                        }
                        let sh = self.value(*v).shape().to_vec();
                        acc(grads, *v, Some(Tensor::from_parts(sh, data)));
                    }
                    off += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for v in xs {
                    let n = self.value(*v).numel();
                    if self.needs(*v) {
                        let sh = self.value(*v).shape().to_vec();
                        acc(grads, *v, Some(Tensor::from_parts(sh, gy.data()[off..off + n].to_vec())));
                    }
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let mut g = Tensor::zeros(tx.shape());
                let w = gy.cols();
                for r in 0..tx.rows() {
                    g.row_mut(r)[*start..*start + w].copy_from_slice(gy.row(r));
                }
                acc(grads, *x, Some(g));
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let mut g = Tensor::zeros(tx.shape());
                let c = tx.cols();
                g.data_mut()[start * c..start * c + gy.numel()].copy_from_slice(gy.data());
                acc(grads, *x, Some(g));
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let inv = 1.0 / tx.rows() as f64;
                let mut g = Tensor::zeros(tx.shape());
                for r in 0..tx.rows() {
                    for (a, b) in g.row_mut(r).iter_mut().zip(gy.data()) {
                        *a = b * inv;
                    }
                }
                acc(grads, *x, Some(g));
            }
            Op::Conv1d { x, w, b, geom } => {
                let mut gx = self.grad_buf(*x);
                let mut gw = self.grad_buf(*w);
                let mut gb = b.and_then(|b| self.grad_buf(b));
                kernels::conv1d_backward(
                    self.value(*x),
                    self.value(*w),
                    *geom,
                    gy,
                    gx.as_mut(),
                    gw.as_mut(),
                    gb.as_mut(),
                );
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                if let Some(b) = b {
                    acc(grads, *b, gb);
                }
            }
            Op::DwConv { x, w, b } => {
                let mut gx = self.grad_buf(*x);
                let mut gw = self.grad_buf(*w);
                let mut gb = b.and_then(|b| self.grad_buf(b));
                kernels::depthwise_causal_conv_backward(
                    self.value(*x),
                    self.value(*w),
                    gy,
                    gx.as_mut(),
                    gw.as_mut(),
                    gb.as_mut(),
                );
                acc(grads, *x, gx);
                acc(grads, *w, gw);
                if let Some(b) = b {
                    acc(grads, *b, gb);
                }
            }
            Op::MaxPool { x, arg } => {
                let mut g = Tensor::zeros(self.value(*x).shape());
                for (o, src) in arg.iter().enumerate() {
                    g.data_mut()[*src] += gy.data()[o];
                }
                acc(grads, *x, Some(g));
            }
            Op::ReverseRows(x) => {
                let mut data = Vec::with_capacity(gy.numel());
                for r in (0..gy.rows()).rev() {
                    data.extend_from_slice(gy.row(r));
                }
                acc(grads, *x, Some(Tensor::from_parts(gy.shape().to_vec(), data)));
            }
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                states,
            } => {
                let mut gx = self.grad_buf(*x);
                let mut gd = self.grad_buf(*delta);
                let mut ga = self.grad_buf(*a);
                let mut gb = self.grad_buf(*b);
                let mut gc = self.grad_buf(*c);
                kernels::selective_scan_backward(
                    self.value(*x),
                    self.value(*delta),
                    self.value(*a),
                    self.value(*b),
                    self.value(*c),
                    states,
                    gy,
                    ScanGrads {
                        x: gx.as_mut(),
                        delta: gd.as_mut(),
                        a: ga.as_mut(),
                        b: gb.as_mut(),
                        c: gc.as_mut(),
                    },
                );
                acc(grads, *x, gx);
                acc(grads, *delta, gd);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
                acc(grads, *c, gc);
            }
            Op::FocalLoss { p, targets, gamma } => {
                let tp = self.value(*p);
                let scale = gy.data()[0] / targets.len() as f64;
                let mut g = Tensor::zeros(tp.shape());
                for (r, &cls) in targets.iter().enumerate() {
                    let pt = tp.row(r)[cls];
                    g.row_mut(r)[cls] = scale * focal_term_derivative(pt, *gamma);
                }
                acc(grads, *p, Some(g));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                let v = gy.data()[0] / tx.numel() as f64;
                acc(grads, *x, Some(Tensor::full(tx.shape(), v)));
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                acc(grads, *x, Some(Tensor::full(tx.shape(), gy.data()[0])));
            }
            Op::Dropout { x, mask } => {
                let g = Tensor::from_parts(
                    gy.shape().to_vec(),
                    gy.data().iter().zip(mask).map(|(a, m)| a * m).collect(),
                );
                acc(grads, *x, Some(g));
            }
        }
        Ok(())
    }

    fn grad_buf(&self, v: Var) -> Option<Tensor> {
        self.needs(v).then(|| Tensor::zeros(self.value(v).shape()))
    }
}

impl Node {
    fn value_len(&self, store: &ParamStore) -> usize {
        match &self.value {
            Value::Owned(t) => t.numel(),
            Value::Param(id) => store.tensor(*id).numel(),
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

/// Value of the mean focal loss without a tape.
pub fn focal_value(probs: &Tensor, targets: &[usize], gamma: f64) -> f64 {
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &c)| {
            let pt = probs.row(r)[c];
            -(1.0 - pt).max(0.0).powf(gamma) * pt.max(PROB_FLOOR).ln()
        })
        .sum();
    total / targets.len() as f64
}

/// d/dp of `−(1−p)^γ·ln(max(p, floor))`.
fn focal_term_derivative(p: f64, gamma: f64) -> f64 {
    let q = (1.0 - p).max(0.0);
    let log_term = p.max(PROB_FLOOR).ln();
    let dlog = if p > PROB_FLOOR { 1.0 / p } else { 0.0 };
    let dq = if gamma == 0.0 {
        0.0
    } else if q == 0.0 {
        if gamma < 1.0 {
            f64::INFINITY
        } else if gamma == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        gamma * q.powf(gamma - 1.0)
    };
    dq * log_term - q.powf(gamma) * dlog
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "input",
        Op::Param(_) => "param",
        Op::Linear { .. } => "linear",
        Op::MatMul { .. } | Op::MatMulBt { .. } => "matmul",
        Op::Add(..) | Op::Sub(..) | Op::Mul(..) => "elementwise",
        Op::Affine { .. } | Op::ScaleBy { .. } | Op::MulRows { .. } | Op::AddRow { .. } => "scale",
        Op::Act { .. } => "activation",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Transpose(_) | Op::Reshape(_) | Op::ReverseRows(_) => "layout",
        Op::ConcatCols(_) | Op::ConcatRows(_) | Op::SliceCols { .. } | Op::SliceRows { .. } => {
            "concat/slice"
        }
        Op::MeanRows(_) | Op::Mean(_) | Op::Sum(_) => "reduction",
        Op::Conv1d { .. } | Op::DwConv { .. } => "conv1d",
        Op::MaxPool { .. } => "max_pool1d",
        Op::Scan { .. } => "selective_scan",
        Op::FocalLoss { .. } => "focal_loss",
        Op::Dropout { .. } => "dropout",
    }
}
