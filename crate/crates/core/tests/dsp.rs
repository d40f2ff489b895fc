//! Filter, resampler and normalization checks against independent oracles.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use sleepfuse::dsp::{
    self, build_windows, clip_sd, design_cheby2_lowpass, resample, segment_epochs, zscore_recording,
    FilterCascade, FilterPhase, Modality, PreprocessConfig, RawRecording,
};
use sleepfuse::nn::SeededRng;

/// Floating-point slack on dB comparisons at the equiripple stopband limit.
const DB_ROUNDING: f64 = 1e-6;

fn sine(freq: f64, rate: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
}

/// Least-squares amplitude of a sinusoid of known frequency.
fn fitted_amplitude(x: &[f64], freq: f64, rate: f64, offset: usize) -> f64 {
    let (mut ss, mut cc, mut sc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let t = 2.0 * PI * freq * (i + offset) as f64 / rate;
        let (s, c) = t.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (xs * cc - xc * sc) / det;
    let b = (xc * ss - xs * sc) / det;
    (a * a + b * b).sqrt()
}

/// Direct-form I evaluation of the cascade from a zero state.
fn impulse_direct_form_one(f: &FilterCascade, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    for s in &f.sections {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = s.b[0] * x[i];
            if i >= 1 {
                acc += s.b[1] * x[i - 1] - s.a[0] * y[i - 1];
            }
            if i >= 2 {
                acc += s.b[2] * x[i - 2] - s.a[1] * y[i - 2];
            }
            y[i] = acc;
        }
        x = y;
    }
    x
}

#[test]
fn cheby2_dc_gain_from_coefficient_sums() {
    let f = design_cheby2_lowpass(8, 8.0, 40.0, 256.0).unwrap();
    assert_eq!(f.sections.len(), 4);
    let h0: f64 = f
        .sections
        .iter()
        .map(|s| (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]))
        .product();
    assert!((0.999..=1.001).contains(&h0.abs()), "|H(0)| = {h0}");
}

#[test]
fn cheby2_stopband_from_impulse_spectrum() {
    let rate = 256.0;
    let f = design_cheby2_lowpass(8, 8.0, 40.0, rate).unwrap();
    let n = 8192;
    let h = impulse_direct_form_one(&f, n);
    let mut buf: Vec<Complex<f64>> = h.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let edge = 8.0 * 1.25;
    let worst = (0..=n / 2)
        .filter(|k| *k as f64 * rate / n as f64 >= edge)
        .map(|k| 20.0 * buf[k].norm().log10())
        .fold(f64::NEG_INFINITY, f64::max);
    println!("worst stopband bin: {worst} dB");
    assert!(worst <= -40.0 + DB_ROUNDING, "stopband peak {worst} dB");
}

#[test]
fn cheby2_matches_reference_design() {
    // |H(f)| of the equivalent design produced by an established DSP library.
    let reference = [
        (0.0, 1.0000000000000007),
        (2.0, 0.9999999999978266),
        (6.0, 0.9995647402268101),
        (8.0, 0.7951941811364237),
        (10.0, 0.010000000000000078),
        (12.0, 1.3300867909715594e-06),
        (20.0, 0.005594385744206661),
        (60.0, 0.004606844545211799),
    ];
    let f = design_cheby2_lowpass(8, 8.0, 40.0, 256.0).unwrap();
    for (freq, mag) in reference {
        let got = f.response(freq, 256.0).norm();
        assert!((got - mag).abs() < 1e-9, "{freq} Hz: {got} vs {mag}");
    }
}

#[test]
fn cheby2_preserves_two_hertz_sine() {
    let rate = 256.0;
    let f = design_cheby2_lowpass(8, 8.0, 40.0, rate).unwrap();
    let x = sine(2.0, rate, 60 * 256, 1.0);
    let y = f.filter(&x, FilterPhase::Causal);
    let skip = 10 * 256;
    let amp = fitted_amplitude(&y[skip..], 2.0, rate, skip);
    assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
}

#[test]
fn cheby2_rejects_cutoff_at_nyquist() {
    assert!(design_cheby2_lowpass(8, 128.0, 40.0, 256.0).is_err());
}

#[test]
fn bandpass_removes_dc() {
    let cfg = PreprocessConfig::default();
    let x = vec![3.7; 60 * 256];
    let y = dsp::bandpass_sceeg(&x, 256.0, &cfg).unwrap();
    let tail = &y[y.len() - 10 * 256..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(mean.abs() < 1e-3 * 3.7, "tail mean {mean}");
}

#[test]
fn bandpass_keeps_alpha_and_attenuates_mains() {
    let cfg = PreprocessConfig::default();
    let rate = 256.0;
    let skip = 20 * 256;
    let pass = dsp::bandpass_sceeg(&sine(10.0, rate, 60 * 256, 1.0), rate, &cfg).unwrap();
    let a10 = fitted_amplitude(&pass[skip..], 10.0, rate, skip);
    assert!((a10 - 1.0).abs() < 0.1, "10 Hz amplitude {a10}");
    let stop = dsp::bandpass_sceeg(&sine(50.0, rate, 60 * 256, 1.0), rate, &cfg).unwrap();
    let a50 = fitted_amplitude(&stop[skip..], 50.0, rate, skip);
    assert!(20.0 * a50.log10() <= -20.0, "50 Hz at {} dB", 20.0 * a50.log10());
    // Mid-band flatness within 1 dB.
    let bp = cfg.sceeg_bandpass(rate).unwrap();
    for f in [1.0, 5.0, 10.0, 20.0, 30.0] {
        let db = 20.0 * bp.response(f, rate).norm().log10();
        assert!(db.abs() < 1.0, "{f} Hz at {db} dB");
    }
}

#[test]
fn bandpass_requires_rate_above_band() {
    assert!(dsp::bandpass_sceeg(&[0.0; 1000], 70.0, &PreprocessConfig::default()).is_err());
}

#[test]
fn resample_constant_stays_constant() {
    let y = resample(&vec![2.5; 5000], 256.0, 100.0).unwrap();
    for v in &y[100..y.len() - 100] {
        assert!((v - 2.5).abs() < 1e-9);
    }
}

#[test]
fn resample_sine_against_analytic() {
    let x = sine(1.0, 200.0, 4000, 1.0);
    let y = resample(&x, 200.0, 100.0).unwrap();
    assert_eq!(y.len(), 2000);
    let interior = 100..1900;
    let n = interior.len() as f64;
    let rms = (interior
        .map(|i| (y[i] - (2.0 * PI * i as f64 / 100.0).sin()).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    assert!(rms < 1e-3, "rms {rms}");
}

#[test]
fn resample_upsampling_sine() {
    let x = sine(3.0, 100.0, 3000, 1.0);
    let y = resample(&x, 100.0, 256.0).unwrap();
    assert_eq!(y.len(), 7680);
    let err = (200..7400)
        .map(|i| (y[i] - (2.0 * PI * 3.0 * i as f64 / 256.0).sin()).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "max error {err}");
}

#[test]
fn resample_epoch_length_contract() {
    let cfg = PreprocessConfig::default();
    let y = resample(&vec![0.1; 7680], 256.0, cfg.target_rate(Modality::Ppg)).unwrap();
    assert_eq!(y.len(), 1024);
    let y = resample(&vec![0.1; 7680], 256.0, cfg.target_rate(Modality::ScEeg)).unwrap();
    assert_eq!(y.len(), 3000);
}

#[test]
fn clip_examples() {
    assert_eq!(clip_sd(&[0.0; 32], 3.0), vec![0.0; 32]);

    let mut rng = SeededRng::new(11);
    let mut x: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
    x[500] = 100.0;
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    let y = clip_sd(&x, 3.0);
    assert!((y[500] - (mu + 3.0 * sd)).abs() < 1e-12);
    assert!(y.iter().all(|v| *v >= mu - 3.0 * sd && *v <= mu + 3.0 * sd));

    let inside: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
    let same = clip_sd(&inside, 3.0);
    assert!(inside.iter().zip(&same).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn zscore_moments_by_direct_summation() {
    let mut rng = SeededRng::new(5);
    let x: Vec<f64> = (0..100_000).map(|_| 4.0 + 7.0 * rng.normal()).collect();
    let z = zscore_recording(&x).unwrap();
    let n = z.len() as f64;
    let mut mean = 0.0;
    for v in &z {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in &z {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    assert!(mean.abs() < 1e-10);
    assert!((var.sqrt() - 1.0).abs() < 1e-10);

    let again = zscore_recording(&z).unwrap();
    assert!(z.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn segmentation_examples() {
    let x: Vec<f64> = (0..9001).map(|i| i as f64).collect();
    let e = segment_epochs(&x[..9000], 3000).unwrap();
    assert_eq!(e.rows(), 3);
    let e = segment_epochs(&x, 3000).unwrap();
    assert_eq!(e.rows(), 3);
    assert_eq!(e.data(), &x[..9000]);
    assert_eq!(e.row(1)[0], 3000.0);
    assert!(segment_epochs(&x[..2999], 3000).is_err());
}

#[test]
fn window_rows_index_epochs() {
    let x: Vec<f64> = (0..20 * 8).map(|i| i as f64).collect();
    let e = segment_epochs(&x, 8).unwrap();
    let w = build_windows(&e, 6, 6, Modality::ScEeg, "s01").unwrap();
    assert_eq!(w.len(), 3);
    for (k, win) in w.iter().enumerate() {
        assert_eq!(win.start_epoch, k * 6);
        for j in 0..6 {
            assert_eq!(win.epochs.row(j), e.row(k * 6 + j));
        }
    }
    assert_eq!(build_windows(&e, 1, 1, Modality::ScEeg, "s01").unwrap().len(), 20);
}

fn synthetic_raw(modality: Modality, seconds: usize, seed: u64) -> RawRecording {
    let rate = 256.0;
    let mut rng = SeededRng::new(seed);
    let samples = (0..seconds * 256)
        .map(|i| {
            let t = i as f64 / rate;
            (2.0 * PI * 1.2 * t).sin() + 0.4 * (2.0 * PI * 9.0 * t).sin() + 0.3 * rng.normal()
        })
        .collect();
    RawRecording::new(samples, rate, modality, "s01", "ch").unwrap()
}

#[test]
fn ppg_chain_order_is_filter_resample_clip_zscore() {
    let cfg = PreprocessConfig::default();
    let mut rec = synthetic_raw(Modality::Ppg, 120, 3);
    // A few spikes so that clipping is active.
    for i in [1000, 9000, 20000] {
        rec.samples[i] += 40.0;
    }
    let out = dsp::normalized_signal(&rec, &cfg).unwrap();

    let lp = cfg.ppg_lowpass(256.0).unwrap().filter(&rec.samples, FilterPhase::Causal);
    let rs = resample(&lp, 256.0, cfg.target_rate(Modality::Ppg)).unwrap();
    let expected = zscore_recording(&clip_sd(&rs, 3.0)).unwrap();
    assert_eq!(out, expected);

    let swapped = clip_sd(&zscore_recording(&rs).unwrap(), 3.0);
    let diff = out.iter().zip(&swapped).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-3, "clip/z-score permutation should change the output");

    // Golden samples of the implemented order.
    let golden = [
        (0usize, 1.776_062_829_806_764_6e-1),
        (1024, -6.762_041_379_521_61e-1),
        (4095, -7.952_956_702_014_715e-1),
    ];
    for (i, v) in golden {
        assert!((out[i] - v).abs() < 1e-12, "sample {i}: {} vs {v}", out[i]);
    }
}

#[test]
fn sceeg_chain_order_is_bandpass_resample_zscore() {
    let cfg = PreprocessConfig::default();
    let rec = synthetic_raw(Modality::ScEeg, 90, 4);
    let out = dsp::normalized_signal(&rec, &cfg).unwrap();
    let bp = dsp::bandpass_sceeg(&rec.samples, 256.0, &cfg).unwrap();
    let expected = zscore_recording(&resample(&bp, 256.0, 100.0).unwrap()).unwrap();
    assert_eq!(out, expected);
}

#[test]
fn ten_hour_recordings_yield_1200_exact_epochs() {
    let cfg = PreprocessConfig::default();
    for (modality, len) in [(Modality::ScEeg, 3000), (Modality::Ppg, 1024)] {
        let rec = synthetic_raw(modality, 10 * 3600, 9);
        let p = dsp::preprocess(&rec, &cfg).unwrap();
        assert_eq!(p.epochs.shape(), &[1200, len]);
    }
}

#[test]
fn preprocessing_is_deterministic() {
    let cfg = PreprocessConfig::default();
    let rec = synthetic_raw(Modality::Ppg, 60, 21);
    let a = dsp::preprocess(&rec, &cfg).unwrap();
    let b = dsp::preprocess(&rec, &cfg).unwrap();
    assert!(a.epochs.data().iter().zip(b.epochs.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.config_hash, b.config_hash);
}
