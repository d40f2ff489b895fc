//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use sleepfuse::nn::{ParamStore, SeededRng, Tape, Tensor, Var};

pub fn random_tensor(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Triple-loop `x·W + b`.
pub fn naive_linear(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let out = w[0].len();
    x.iter()
        .map(|row| {
            (0..out)
                .map(|j| {
                    let mut s = b.get(j).copied().unwrap_or(0.0);
                    for (i, xv) in row.iter().enumerate() {
                        s += xv * w[i][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Nested-loop cross-correlation over an explicitly zero-padded input.
pub fn naive_conv1d(
    x: &[Vec<f64>],
    w: &[Vec<Vec<f64>>],
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Vec<Vec<f64>> {
    let len = x[0].len();
    let padded: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut p = vec![0.0; pad];
            p.extend_from_slice(row);
            p.extend(std::iter::repeat_n(0.0, pad));
            p
        })
        .collect();
    let k = w[0][0].len();
    let span = dilation * (k - 1) + 1;
    let lout = (len + 2 * pad - span) / stride + 1;
    w.iter()
        .map(|wo| {
            (0..lout)
                .map(|t| {
                    let mut s = 0.0;
                    for (c, wc) in wo.iter().enumerate() {
                        for (kk, wv) in wc.iter().enumerate() {
                            s += wv * padded[c][t * stride + kk * dilation];
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Single-head attention computed one query at a time.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum())
                .collect()
        })
        .collect()
}

/// Selective scan via the unrolled closed form
/// `y_t = Σ_{s≤t} C_t·(Π_{r=s+1..t} exp(Δ_r A))·Δ_s B_s x_s`,
/// which never materializes a running state.
pub fn closed_form_scan(
    x: &[Vec<f64>],
    delta: &[Vec<f64>],
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    c: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let t_len = x.len();
    let d = x[0].len();
    let n = a[0].len();
    let mut y = vec![vec![0.0; d]; t_len];
    for t in 0..t_len {
        for ch in 0..d {
            let mut total = 0.0;
            for s in 0..=t {
                for st in 0..n {
                    let mut log_decay = 0.0;
                    for r in (s + 1)..=t {
                        log_decay += delta[r][ch] * a[ch][st];
                    }
                    total += c[t][st] * log_decay.exp() * delta[s][ch] * b[s][st] * x[s][ch];
                }
            }
            y[t][ch] = total;
        }
    }
    y
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Weighted sum `Σ y ⊙ r` so that every output element carries gradient.
pub fn probe_loss(g: &mut Tape<'_>, y: Var, weights: &Tensor) -> Var {
    let r = g.input(weights.clone());
    let p = g.mul(y, r).unwrap();
    g.sum(p).unwrap()
}

pub fn store_with(tensors: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in tensors {
        s.add(*name, t.clone());
    }
    s
}
