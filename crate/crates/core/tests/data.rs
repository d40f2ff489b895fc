//! Containers, hypnograms, splits and the synthetic cohort.

use rustfft::{num_complex::Complex, FftPlanner};
use sleepfuse::data::{
    map_aasm_to_4class, preprocess_cohort, split_subjects, synth_generate, AasmLabel, Hypnogram,
    RecordingContainer, Stage, SubjectEpochs, SynthConfig,
};
use sleepfuse::dsp::{Modality, PreprocessConfig, RawRecording};
use sleepfuse::metrics::{class_metrics, confusion, kappa};
use sleepfuse::nn::SeededRng;

fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf[..x.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

fn band(p: &[f64], df: f64, lo: f64, hi: f64) -> f64 {
    p.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            f >= lo && f < hi
        })
        .map(|(_, v)| v)
        .sum::<f64>()
        + 1e-12
}

/// Relative log band powers of one 100 Hz epoch.
fn eeg_features(epoch: &[f64]) -> Vec<f64> {
    let p = power_spectrum(epoch);
    let df = 100.0 / epoch.len() as f64;
    let bands = [(0.5, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 15.0), (15.0, 30.0)];
    let total: f64 = bands.iter().map(|(l, h)| band(&p, df, *l, *h)).sum();
    bands.iter().map(|(l, h)| (band(&p, df, *l, *h) / total).ln()).collect()
}

/// Heart rate, pulse-interval spread and respiratory power of one PPG epoch.
fn ppg_features(epoch: &[f64]) -> Vec<f64> {
    let rate = 1024.0 / 30.0;
    let p = power_spectrum(epoch);
    let df = rate / epoch.len() as f64;
    let (peak_k, _) = p
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            (0.6..2.5).contains(&f)
        })
        .fold((0, 0.0), |best, (k, v)| if *v > best.1 { (k, *v) } else { best });
    // Peaks at least 0.3 s apart.
    let min_gap = (0.3 * rate) as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..epoch.len() - 1 {
        if epoch[i] > epoch[i - 1] && epoch[i] >= epoch[i + 1] && epoch[i] > 0.5 {
            match peaks.last() {
                Some(&last) if i - last < min_gap => {
                    if epoch[i] > epoch[last] {
                        *peaks.last_mut().unwrap() = i;
                    }
                }
                _ => peaks.push(i),
            }
        }
    }
    let ibis: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / rate).collect();
    let mean = ibis.iter().sum::<f64>() / ibis.len().max(1) as f64;
    let sd = (ibis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ibis.len().max(1) as f64).sqrt();
    let hr_power = band(&p, df, 0.6, 3.0);
    vec![peak_k as f64 * df, (sd + 1e-3).ln(), (band(&p, df, 0.1, 0.5) / hr_power).ln()]
}

/// Gaussian class-conditional plug-in classifier with full covariances.
struct PlugIn {
    means: Vec<Vec<f64>>,
    inv_covs: Vec<Vec<Vec<f64>>>,
    log_dets: Vec<f64>,
    log_priors: Vec<f64>,
}

fn invert(m: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut log_det = 0.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        inv.swap(c, piv);
        let d = a[c][c];
        log_det += d.abs().ln();
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    (inv, log_det)
}

impl PlugIn {
    fn fit(x: &[Vec<f64>], y: &[Stage]) -> Self {
        let d = x[0].len();
        let mut means = vec![vec![0.0; d]; 4];
        let mut counts = [0usize; 4];
        for (f, s) in x.iter().zip(y) {
            counts[s.index()] += 1;
            for (m, v) in means[s.index()].iter_mut().zip(f) {
                *m += v;
            }
        }
        for (m, c) in means.iter_mut().zip(counts) {
            m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
        }
        let mut covs = vec![vec![vec![0.0; d]; d]; 4];
        for (f, s) in x.iter().zip(y) {
            let m = &means[s.index()];
            for i in 0..d {
                for j in 0..d {
                    covs[s.index()][i][j] += (f[i] - m[i]) * (f[j] - m[j]);
                }
            }
        }
        let mut inv_covs = Vec::new();
        let mut log_dets = Vec::new();
        for (c, cov) in covs.iter_mut().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] /= counts[c].max(2) as f64 - 1.0;
                }
                cov[i][i] += 1e-6;
            }
            let (inv, ld) = invert(cov);
            inv_covs.push(inv);
            log_dets.push(ld);
        }
        let total: usize = counts.iter().sum();
        let log_priors = counts.iter().map(|c| ((*c as f64 + 1.0) / (total as f64 + 4.0)).ln()).collect();
        Self {
            means,
            inv_covs,
            log_dets,
            log_priors,
        }
    }

    fn predict(&self, f: &[f64]) -> Stage {
        let score = |c: usize| {
            let diff: Vec<f64> = f.iter().zip(&self.means[c]).map(|(a, b)| a - b).collect();
            let mut q = 0.0;
            for i in 0..diff.len() {
                for j in 0..diff.len() {
                    q += diff[i] * self.inv_covs[c][i][j] * diff[j];
                }
            }
            self.log_priors[c] - 0.5 * self.log_dets[c] - 0.5 * q
        };
        Stage::ALL[(0..4).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap()]
    }
}

fn features(subjects: &[&SubjectEpochs], m: Modality) -> (Vec<Vec<f64>>, Vec<Stage>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in subjects {
        let t = s.modality(m);
        for (i, st) in s.stages.iter().enumerate() {
            x.push(match m {
                Modality::ScEeg => eeg_features(t.row(i)),
                Modality::Ppg => ppg_features(t.row(i)),
            });
            y.push(*st);
        }
    }
    (x, y)
}

#[test]
fn plug_in_oracle_shows_designed_complementarity() {
    let cfg = SynthConfig {
        n_subjects: 24,
        epochs_per_subject: 120,
        ..SynthConfig::default()
    };
    let cohort = preprocess_cohort(&synth_generate(&cfg).unwrap(), &PreprocessConfig::default()).unwrap();
    let (train, test): (Vec<&SubjectEpochs>, Vec<&SubjectEpochs>) = {
        let ids: Vec<String> = cohort.iter().map(|s| s.subject_id.clone()).collect();
        let split = split_subjects(&ids, (0.5, 0.0, 0.5), 1).unwrap();
        (
            cohort.iter().filter(|s| split.train.contains(&s.subject_id)).collect(),
            cohort.iter().filter(|s| split.test.contains(&s.subject_id)).collect(),
        )
    };
    let mut recalls = Vec::new();
    for m in [Modality::ScEeg, Modality::Ppg] {
        let (xtr, ytr) = features(&train, m);
        let (xte, yte) = features(&test, m);
        let model = PlugIn::fit(&xtr, &ytr);
        let pred: Vec<Stage> = xte.iter().map(|f| model.predict(f)).collect();
        let cm = confusion(&pred, &yte).unwrap();
        let k = kappa(&cm).unwrap();
        let r: Vec<f64> = class_metrics(&cm).per_class.iter().map(|c| c.recall).collect();
        println!("{m}: kappa {k:.3} recall {r:.3?}");
        assert!(k > 0.3 && k < 0.9, "{m} kappa {k}");
        recalls.push(r);
    }
    let weakest = |r: &[f64]| (0..4).min_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
    assert_eq!(weakest(&recalls[0]), Stage::Light.index());
    assert!([Stage::Deep.index(), Stage::Rem.index()].contains(&weakest(&recalls[1])));
    assert!(recalls[0][1] < recalls[1][1]);
}

#[test]
fn clinical_labels_map_to_four_classes() {
    assert_eq!(map_aasm_to_4class(AasmLabel::N1).unwrap(), Stage::Light);
    assert_eq!(map_aasm_to_4class(AasmLabel::N2).unwrap(), Stage::Light);
    assert_eq!(map_aasm_to_4class(AasmLabel::W).unwrap(), Stage::Wake);
    assert_eq!(map_aasm_to_4class(AasmLabel::N3).unwrap(), Stage::Deep);
    assert_eq!(map_aasm_to_4class(AasmLabel::Rem).unwrap(), Stage::Rem);
    assert!("N5".parse::<AasmLabel>().is_err());
}

#[test]
fn container_round_trip_is_bit_exact() {
    let mut rng = SeededRng::new(2);
    let samples: Vec<f64> = (0..10_000).map(|_| (rng.normal() * 50.0) as f32 as f64).collect();
    let rec = RawRecording::new(samples, 256.0, Modality::ScEeg, "s01", "C4-M1").unwrap();
    let c = RecordingContainer::from_raw(&rec);
    let bytes = c.to_bytes().unwrap();
    let back = RecordingContainer::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.to_raw().unwrap(), rec);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s01.sceeg.srec");
    c.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn container_rejects_corrupt_header_and_count_mismatch() {
    let rec = RawRecording::new(vec![1.0; 64], 100.0, Modality::Ppg, "s", "PPG").unwrap();
    let bytes = RecordingContainer::from_raw(&rec).to_bytes().unwrap();
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;

    let mut corrupt = bytes.clone();
    corrupt[12] = b'[';
    assert!(RecordingContainer::from_bytes(&corrupt).is_err());

    let text = String::from_utf8(bytes[12..12 + header_len].to_vec()).unwrap();
    let renamed = text.replace("rate_hz", "rate_xx");
    let mut bad_schema = bytes[..12].to_vec();
    bad_schema.extend_from_slice(renamed.as_bytes());
    bad_schema.extend_from_slice(&bytes[12 + header_len..]);
    assert!(RecordingContainer::from_bytes(&bad_schema).is_err());

    let mut short = bytes.clone();
    short.truncate(bytes.len() - 4);
    assert!(RecordingContainer::from_bytes(&short).is_err());
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(RecordingContainer::from_bytes(&long).is_err());
}

#[test]
fn hypnogram_csv_round_trip() {
    let h = Hypnogram::new("s2", vec![Stage::Wake, Stage::Rem, Stage::Deep]);
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), "epoch_index,stage_label\n0,0\n1,3\n2,2\n");
    assert_eq!(Hypnogram::read_csv("s2", &buf[..]).unwrap(), h);
}

#[test]
fn absorbing_deep_without_noise() {
    let cfg = SynthConfig {
        n_subjects: 2,
        epochs_per_subject: 12,
        transition: [[0.0, 0.0, 1.0, 0.0]; 4],
        eeg_noise: 0.0,
        ppg_noise: 0.0,
        ..SynthConfig::default()
    };
    for s in synth_generate(&cfg).unwrap() {
        assert_eq!(s.hypnogram.stages[0], Stage::Wake);
        assert!(s.hypnogram.stages[1..].iter().all(|st| *st == Stage::Deep));
    }
}

#[test]
fn generator_is_seed_deterministic() {
    let cfg = SynthConfig {
        n_subjects: 3,
        epochs_per_subject: 4,
        ..SynthConfig::default()
    };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a, b);
    let c = synth_generate(&SynthConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a[0].sceeg.samples, c[0].sceeg.samples);
}

#[test]
fn generated_epochs_have_contract_lengths() {
    let cfg = SynthConfig {
        n_subjects: 2,
        epochs_per_subject: 10,
        ..SynthConfig::default()
    };
    for s in preprocess_cohort(&synth_generate(&cfg).unwrap(), &PreprocessConfig::default()).unwrap() {
        assert_eq!(s.sceeg.shape(), &[10, 3000]);
        assert_eq!(s.ppg.shape(), &[10, 1024]);
    }
}

#[test]
fn split_examples() {
    let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    let m = split_subjects(&ids, (0.6, 0.2, 0.2), 4).unwrap();
    assert_eq!((m.train.len(), m.val.len(), m.test.len()), (6, 2, 2));
    assert_eq!(m, split_subjects(&ids, (0.6, 0.2, 0.2), 4).unwrap());
    let mut all: Vec<String> = m.train.iter().chain(&m.val).chain(&m.test).cloned().collect();
    all.sort();
    let mut expected = ids.clone();
    expected.sort();
    assert_eq!(all, expected);
    m.validate().unwrap();
    assert!(split_subjects(&ids, (0.5, 0.2, 0.2), 4).is_err());
}

#[test]
fn cohort_directory_round_trip() {
    let cfg = SynthConfig {
        n_subjects: 2,
        epochs_per_subject: 3,
        ..SynthConfig::default()
    };
    let subjects = synth_generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let pre = dir.path().join("pre");
    sleepfuse::data::cohort::save_raw_cohort(&raw, &subjects).unwrap();
    let pcfg = PreprocessConfig::default();
    for m in [Modality::ScEeg, Modality::Ppg] {
        sleepfuse::data::cohort::preprocess_dir(&raw, &pre, m, &pcfg).unwrap();
    }
    let loaded = sleepfuse::data::cohort::load_preprocessed_cohort(&pre).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded[0].stages, subjects[0].hypnogram.stages);
    assert_eq!(loaded[0].sceeg.shape(), &[3, 3000]);
}
