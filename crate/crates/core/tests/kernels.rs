mod common;

use common::*;
use sleepfuse::nn::gradcheck;
use sleepfuse::nn::kernels::{self, Activation, ConvGeom};
use sleepfuse::nn::layers::{attention_heads, Builder, MultiHeadAttention};
use sleepfuse::nn::{ParamStore, SeededRng, Tape, Tensor};

#[test]
fn linear_trivial_cases() {
    let x = Tensor::vector(vec![1.0, 0.0]);
    let y = kernels::linear(&x, &Tensor::identity(2), Some(&Tensor::vector(vec![0.0, 0.0]))).unwrap();
    assert_eq!(y.data(), &[1.0, 0.0]);

    let x = Tensor::vector(vec![2.0, 3.0]);
    let w = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
    let y = kernels::linear(&x, &w, Some(&Tensor::vector(vec![1.0]))).unwrap();
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn linear_matches_triple_loop() {
    let mut rng = SeededRng::new(11);
    for _ in 0..10 {
        let x = random_tensor(&mut rng, &[4, 8], 1.0);
        let w = random_tensor(&mut rng, &[8, 3], 1.0);
        let b = random_tensor(&mut rng, &[3], 1.0);
        let y = kernels::linear(&x, &w, Some(&b)).unwrap();
        let oracle = naive_linear(&rows(&x), &rows(&w), b.data());
        assert!(max_abs_diff(&rows(&y), &oracle) < 1e-12);
    }
}

#[test]
fn linear_rejects_mismatch() {
    let x = Tensor::zeros(&[2, 3]);
    let w = Tensor::zeros(&[4, 2]);
    assert!(kernels::linear(&x, &w, None).is_err());
}

#[test]
fn conv1d_trivial_cases() {
    let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
    assert_eq!(kernels::conv1d(&x, &w, None, ConvGeom::new(1, 0)).unwrap().data(), &[1.0, 2.0, 3.0]);

    let x = Tensor::matrix(1, 4, vec![1.0; 4]).unwrap();
    let w = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
    assert_eq!(kernels::conv1d(&x, &w, None, ConvGeom::new(2, 0)).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn conv1d_matches_nested_loops() {
    let mut rng = SeededRng::new(12);
    for &(stride, pad, dil) in &[(1, 0, 1), (1, 2, 1), (2, 1, 1), (3, 2, 2), (1, 4, 2)] {
        let x = random_tensor(&mut rng, &[2, 16], 1.0);
        let w = random_tensor(&mut rng, &[3, 2, 5], 1.0);
        let y = kernels::conv1d(&x, &w, None, ConvGeom::new(stride, pad).dilated(dil)).unwrap();
        let wn: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|o| (0..2).map(|c| w.data()[(o * 2 + c) * 5..(o * 2 + c + 1) * 5].to_vec()).collect())
            .collect();
        let oracle = naive_conv1d(&rows(&x), &wn, stride, pad, dil);
        assert_eq!(y.shape()[1], oracle[0].len());
        assert!(max_abs_diff(&rows(&y), &oracle) < 1e-12);
    }
}

#[test]
fn conv1d_empty_output_is_error() {
    let x = Tensor::zeros(&[1, 3]);
    let w = Tensor::zeros(&[1, 1, 5]);
    assert!(kernels::conv1d(&x, &w, None, ConvGeom::new(1, 0)).is_err());
}

#[test]
fn layer_norm_cases() {
    let one = Tensor::full(&[3], 1.0);
    let zero = Tensor::zeros(&[3]);
    let y = kernels::layer_norm(&Tensor::vector(vec![5.0; 3]), &one, &zero, 1e-5).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

    let one2 = Tensor::full(&[2], 1.0);
    let zero2 = Tensor::zeros(&[2]);
    let y = kernels::layer_norm(&Tensor::vector(vec![1.0, -1.0]), &one2, &zero2, 1e-12).unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);

    let mut rng = SeededRng::new(13);
    let x = random_tensor(&mut rng, &[5, 64], 10.0);
    let ones = Tensor::full(&[64], 1.0);
    let zeros = Tensor::zeros(&[64]);
    let y = kernels::layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
    for r in 0..5 {
        let row = y.row(r);
        let m = row.iter().sum::<f64>() / 64.0;
        let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 64.0;
        assert!(m.abs() < 1e-10);
        assert!((v - 1.0).abs() < 1e-6);
    }
}

#[test]
fn softmax_cases() {
    assert_eq!(kernels::softmax(&Tensor::vector(vec![0.0, 0.0])).data(), &[0.5, 0.5]);
    let y = kernels::softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]));
    let z: f64 = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, v) in [1f64, 2.0, 3.0].iter().enumerate() {
        assert!((y.data()[i] - v.exp() / z).abs() < 1e-15);
    }
    let mut rng = SeededRng::new(14);
    let x = random_tensor(&mut rng, &[20, 7], 1e3);
    let y = kernels::softmax(&x);
    for r in 0..20 {
        assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(y.row(r).iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn gelu_matches_erf_closed_form() {
    let expected = 0.5 * (1.0 + libm_erf(1.0 / 2f64.sqrt()));
    assert!((Activation::Gelu.apply(1.0) - expected).abs() < 1e-10);
}

// Abramowitz–Stegun 7.1.26 is too coarse; use the series for erf at small x.
fn libm_erf(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x;
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn identity_attention(store: &mut ParamStore, dim: usize, heads: usize) -> MultiHeadAttention {
    let mut rng = SeededRng::new(0);
    let mut b = Builder::new(store, &mut rng, "mha");
    let mha = MultiHeadAttention::new(&mut b, dim, heads).unwrap();
    for lin in [&mha.q, &mha.k, &mha.v, &mha.out] {
        *store.tensor_mut(lin.w) = Tensor::identity(dim);
        store.tensor_mut(lin.b.unwrap()).data_mut().fill(0.0);
    }
    mha
}

#[test]
fn attention_matches_naive_oracle() {
    let mut rng = SeededRng::new(15);
    let mut store = ParamStore::new();
    let mha = identity_attention(&mut store, 6, 1);
    for t in 1..5 {
        let q = random_tensor(&mut rng, &[t, 6], 1.0);
        let k = random_tensor(&mut rng, &[t + 1, 6], 1.0);
        let v = random_tensor(&mut rng, &[t + 1, 6], 1.0);
        let mut g = Tape::new(&store);
        let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
        let y = mha.forward(&mut g, qv, kv, vv).unwrap();
        let oracle = naive_attention(&rows(&q), &rows(&k), &rows(&v));
        assert!(max_abs_diff(&rows(g.value(y)), &oracle) < 1e-12);
    }
}

#[test]
fn multi_head_split_matches_per_head_oracle() {
    let mut rng = SeededRng::new(16);
    let store = ParamStore::new();
    let q = random_tensor(&mut rng, &[3, 8], 1.0);
    let k = random_tensor(&mut rng, &[4, 8], 1.0);
    let v = random_tensor(&mut rng, &[4, 8], 1.0);
    let mut g = Tape::new(&store);
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let y = attention_heads(&mut g, qv, kv, vv, 2).unwrap();
    let y = rows(g.value(y));
    for h in 0..2 {
        let cut = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..t.rows()).map(|r| t.row(r)[h * 4..(h + 1) * 4].to_vec()).collect()
        };
        let oracle = naive_attention(&cut(&q), &cut(&k), &cut(&v));
        let got: Vec<Vec<f64>> = y.iter().map(|r| r[h * 4..(h + 1) * 4].to_vec()).collect();
        assert!(max_abs_diff(&got, &oracle) < 1e-12);
    }
}

#[test]
fn single_key_attention_ignores_query() {
    let mut rng = SeededRng::new(17);
    let mut store = ParamStore::new();
    let mut brng = SeededRng::new(1);
    let mha = {
        let mut b = Builder::new(&mut store, &mut brng, "mha");
        MultiHeadAttention::new(&mut b, 8, 2).unwrap()
    };
    let k = random_tensor(&mut rng, &[1, 8], 1.0);
    let v = random_tensor(&mut rng, &[1, 8], 1.0);
    let mut outs = Vec::new();
    for _ in 0..3 {
        let q = random_tensor(&mut rng, &[2, 8], 5.0);
        let mut g = Tape::new(&store);
        let (qv, kv, vv) = (g.input(q), g.input(k.clone()), g.input(v.clone()));
        let y = mha.forward(&mut g, qv, kv, vv).unwrap();
        outs.push(g.value(y).clone());
    }
    assert_eq!(outs[0].row(0), outs[1].row(1));
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn attention_zero_inputs_zero_output() {
    let mut store = ParamStore::new();
    let mut brng = SeededRng::new(1);
    let mha = {
        let mut b = Builder::new(&mut store, &mut brng, "mha");
        MultiHeadAttention::new(&mut b, 8, 8).unwrap()
    };
    for id in mha.params() {
        store.tensor_mut(id).data_mut().fill(0.0);
    }
    let mut g = Tape::new(&store);
    let z = g.input(Tensor::zeros(&[3, 8]));
    let y = mha.forward(&mut g, z, z, z).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut store = ParamStore::new();
    let mut rng = SeededRng::new(1);
    let mut b = Builder::new(&mut store, &mut rng, "mha");
    assert!(MultiHeadAttention::new(&mut b, 10, 3).is_err());
}

#[test]
fn backward_closed_forms() {
    let mut rng = SeededRng::new(18);
    let x = random_tensor(&mut rng, &[3, 4], 1.0);
    let store = store_with(&[("w", random_tensor(&mut rng, &[4, 2], 1.0))]);
    let mut g = Tape::new(&store);
    let xv = g.input(x.clone());
    let w = g.param(store.find("w").unwrap());
    let y = g.linear(xv, w, None).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    let gw = grads.get(store.find("w").unwrap()).unwrap();
    // ∂/∂W Σ xW = xᵀ·1
    for i in 0..4 {
        let col_sum: f64 = (0..3).map(|r| x.at(r, i)).sum();
        assert!((gw.at(i, 0) - col_sum).abs() < 1e-14);
        assert!((gw.at(i, 1) - col_sum).abs() < 1e-14);
    }

    let mut g = Tape::new(&store);
    let w = g.param(store.find("w").unwrap());
    let zero = g.scale(w, 0.0).unwrap();
    let c = g.sum(zero).unwrap();
    let grads = g.backward(c).unwrap();
    assert!(grads.get(store.find("w").unwrap()).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let store = store_with(&[("w", Tensor::zeros(&[2]))]);
    let mut g = Tape::new(&store);
    let w = g.param(store.find("w").unwrap());
    assert!(g.backward(w).is_err());
}

fn gradcheck_op<F>(name: &str, store: &ParamStore, out_shape: &[usize], f: F)
where
    F: Fn(&mut Tape<'_>, &ParamStore) -> sleepfuse::Result<sleepfuse::nn::Var>,
{
    let mut rng = SeededRng::new(99);
    let weights = random_tensor(&mut rng, out_shape, 1.0);
    let report = gradcheck::check(store, 1e-5, 64, |g| {
        let y = f(g, store)?;
        Ok(probe_loss(g, y, &weights))
    })
    .unwrap();
    assert!(
        report.max_rel_error < 1e-4,
        "{name}: {} ({})",
        report.max_rel_error,
        report.worst_param
    );
}

fn p(g: &mut Tape<'_>, s: &ParamStore, name: &str) -> sleepfuse::nn::Var {
    g.param(s.find(name).unwrap())
}

#[test]
fn every_kernel_passes_finite_differences() {
    let mut rng = SeededRng::new(20);
    for trial in 0..10 {
        let r = 2 + trial % 3;
        let c = 3 + trial % 4;
        let s = store_with(&[
            ("x", random_tensor(&mut rng, &[r, c], 1.0)),
            ("y", random_tensor(&mut rng, &[r, c], 1.0)),
            ("w", random_tensor(&mut rng, &[c, 5], 1.0)),
            ("b", random_tensor(&mut rng, &[5], 1.0)),
            ("gamma", random_tensor(&mut rng, &[c], 1.0)),
            ("beta", random_tensor(&mut rng, &[c], 1.0)),
            ("rowv", random_tensor(&mut rng, &[r], 1.0)),
            ("colv", random_tensor(&mut rng, &[c], 1.0)),
            ("s", random_tensor(&mut rng, &[1], 1.0)),
        ]);
        gradcheck_op("linear", &s, &[r, 5], |g, s| {
            let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
            g.linear(x, w, Some(b))
        });
        gradcheck_op("matmul", &s, &[r, 5], |g, s| {
            let (x, w) = (p(g, s, "x"), p(g, s, "w"));
            g.matmul(x, w)
        });
        gradcheck_op("matmul_bt", &s, &[r, r], |g, s| {
            let (x, y) = (p(g, s, "x"), p(g, s, "y"));
            g.matmul_bt(x, y)
        });
        gradcheck_op("mul", &s, &[r, c], |g, s| {
            let (x, y) = (p(g, s, "x"), p(g, s, "y"));
            let m = g.mul(x, y)?;
            let d = g.sub(m, y)?;
            g.add(d, x)
        });
        gradcheck_op("scale_by", &s, &[r, c], |g, s| {
            let (x, sc) = (p(g, s, "x"), p(g, s, "s"));
            let y = g.scale_by(x, sc)?;
            g.affine(y, -0.7, 0.3)
        });
        gradcheck_op("mul_rows", &s, &[r, c], |g, s| {
            let (x, v) = (p(g, s, "x"), p(g, s, "rowv"));
            g.mul_rows(x, v)
        });
        gradcheck_op("add_row", &s, &[r, c], |g, s| {
            let (x, v) = (p(g, s, "x"), p(g, s, "colv"));
            g.add_row(x, v)
        });
        for act in [Activation::Gelu, Activation::Silu, Activation::Sigmoid, Activation::Softplus, Activation::Tanh, Activation::Exp] {
            let weights = random_tensor(&mut rng, &[r, c], 1.0);
            let rep = gradcheck::check(&s, 1e-5, 64, |g| {
                let x = p(g, &s, "x");
                let y = g.act(x, act)?;
                Ok(probe_loss(g, y, &weights))
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "{act:?}: {}", rep.worst_param);
        }
        gradcheck_op("relu", &s, &[r, c], |g, s| {
            let x = p(g, s, "x");
            g.act(x, Activation::Relu)
        });
        gradcheck_op("softmax", &s, &[r, c], |g, s| {
            let x = p(g, s, "x");
            g.softmax(x)
        });
        gradcheck_op("layer_norm", &s, &[r, c], |g, s| {
            let (x, ga, be) = (p(g, s, "x"), p(g, s, "gamma"), p(g, s, "beta"));
            g.layer_norm(x, ga, be, 1e-5)
        });
        gradcheck_op("transpose", &s, &[c, r], |g, s| {
            let x = p(g, s, "x");
            g.transpose(x)
        });
        gradcheck_op("concat_slice", &s, &[r, 2 * c - 1], |g, s| {
            let (x, y) = (p(g, s, "x"), p(g, s, "y"));
            let cat = g.concat_cols(&[x, y])?;
            g.slice_cols(cat, 1, 2 * c)
        });
        gradcheck_op("concat_rows", &s, &[2 * r - 1, c], |g, s| {
            let (x, y) = (p(g, s, "x"), p(g, s, "y"));
            let cat = g.concat_rows(&[x, y])?;
            g.slice_rows(cat, 1, 2 * r)
        });
        gradcheck_op("mean_rows", &s, &[c], |g, s| {
            let x = p(g, s, "x");
            g.mean_rows(x)
        });
        gradcheck_op("reverse", &s, &[r, c], |g, s| {
            let x = p(g, s, "x");
            g.reverse_rows(x)
        });
        gradcheck_op("reshape", &s, &[r * c], |g, s| {
            let x = p(g, s, "x");
            g.reshape(x, &[r * c])
        });
    }
}

#[test]
fn conv_pool_scan_pass_finite_differences() {
    let mut rng = SeededRng::new(21);
    for trial in 0..10 {
        let len = 12 + trial;
        let stride = 1 + trial % 2;
        let pad = trial % 3;
        let dil = 1 + trial % 2;
        let s = store_with(&[
            ("x", random_tensor(&mut rng, &[2, len], 1.0)),
            ("w", random_tensor(&mut rng, &[3, 2, 3], 1.0)),
            ("b", random_tensor(&mut rng, &[3], 1.0)),
        ]);
        let geom = ConvGeom::new(stride, pad).dilated(dil);
        let lout = geom.out_len(len, 3).unwrap();
        let weights = random_tensor(&mut rng, &[3, lout], 1.0);
        let rep = gradcheck::check(&s, 1e-5, 64, |g| {
            let (x, w, b) = (p(g, &s, "x"), p(g, &s, "w"), p(g, &s, "b"));
            let y = g.conv1d(x, w, Some(b), geom)?;
            Ok(probe_loss(g, y, &weights))
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "conv1d: {}", rep.worst_param);

        let plen = (len + 2 - 4) / 2 + 1;
        let weights = random_tensor(&mut rng, &[2, plen], 1.0);
        let rep = gradcheck::check(&s, 1e-5, 64, |g| {
            let x = p(g, &s, "x");
            let y = g.max_pool1d(x, 4, 2, 1)?;
            Ok(probe_loss(g, y, &weights))
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "max_pool: {}", rep.worst_param);

        let t_len = 2 + trial % 5;
        let (d, n) = (3, 2 + trial % 3);
        let s = store_with(&[
            ("x", random_tensor(&mut rng, &[t_len, d], 1.0)),
            ("delta", random_tensor(&mut rng, &[t_len, d], 0.3).map(|v| v.abs() + 0.05)),
            ("a", random_tensor(&mut rng, &[d, n], 1.0).map(|v| -v.abs() - 0.1)),
            ("b", random_tensor(&mut rng, &[t_len, n], 1.0)),
            ("c", random_tensor(&mut rng, &[t_len, n], 1.0)),
            ("dw", random_tensor(&mut rng, &[d, 4], 1.0)),
            ("db", random_tensor(&mut rng, &[d], 1.0)),
        ]);
        let weights = random_tensor(&mut rng, &[t_len, d], 1.0);
        let rep = gradcheck::check(&s, 1e-5, 64, |g| {
            let (x, dl, a, b, c) = (p(g, &s, "x"), p(g, &s, "delta"), p(g, &s, "a"), p(g, &s, "b"), p(g, &s, "c"));
            let y = g.selective_scan(x, dl, a, b, c)?;
            Ok(probe_loss(g, y, &weights))
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "scan: {}", rep.worst_param);

        let rep = gradcheck::check(&s, 1e-5, 64, |g| {
            let (x, w, b) = (p(g, &s, "x"), p(g, &s, "dw"), p(g, &s, "db"));
            let y = g.depthwise_causal_conv(x, w, Some(b))?;
            Ok(probe_loss(g, y, &weights))
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "depthwise: {}", rep.worst_param);
    }
}

#[test]
fn scan_matches_closed_form() {
    let mut rng = SeededRng::new(22);
    for _ in 0..20 {
        let t_len = 1 + rng.below(8);
        let d = 1 + rng.below(4);
        let n = 1 + rng.below(5);
        let x = random_tensor(&mut rng, &[t_len, d], 1.0);
        let delta = random_tensor(&mut rng, &[t_len, d], 0.5).map(|v| v.abs());
        let a = random_tensor(&mut rng, &[d, n], 1.0).map(|v| -v.abs());
        let b = random_tensor(&mut rng, &[t_len, n], 1.0);
        let c = random_tensor(&mut rng, &[t_len, n], 1.0);
        let (y, _) = kernels::selective_scan(&x, &delta, &a, &b, &c).unwrap();
        let oracle = closed_form_scan(&rows(&x), &rows(&delta), &rows(&a), &rows(&b), &rows(&c));
        assert!(max_abs_diff(&rows(&y), &oracle) < 1e-10);
    }
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut s = store_with(&[("enc.w", Tensor::full(&[2, 2], 0.5)), ("head.w", Tensor::full(&[2, 2], 0.5))]);
    s.freeze_prefixes(&["enc."]);
    let mut g = Tape::new(&s);
    let x = g.input(Tensor::full(&[1, 2], 1.0));
    let e = p(&mut g, &s, "enc.w");
    let h = p(&mut g, &s, "head.w");
    let y = g.matmul(x, e).unwrap();
    let y = g.matmul(y, h).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(s.find("enc.w").unwrap()).is_none());
    assert!(grads.get(s.find("head.w").unwrap()).is_some());
}

#[test]
fn non_finite_values_are_errors() {
    let s = store_with(&[("x", Tensor::vector(vec![800.0]))]);
    let mut g = Tape::new(&s);
    let x = p(&mut g, &s, "x");
    assert!(g.act(x, Activation::Exp).is_err());
}

#[test]
fn dropout_defaults_to_identity_and_masks_when_enabled() {
    let s = store_with(&[("x", Tensor::full(&[4, 4], 1.0))]);
    let mut g = Tape::new(&s);
    let x = p(&mut g, &s, "x");
    assert_eq!(g.dropout(x, 0.5).unwrap(), x);
    let mut g = Tape::new(&s).with_dropout(SeededRng::new(5));
    let x = p(&mut g, &s, "x");
    let y = g.dropout(x, 0.5).unwrap();
    let vals = g.value(y).data();
    assert!(vals.iter().all(|v| *v == 0.0 || *v == 2.0));
    assert!(vals.contains(&0.0));
}
