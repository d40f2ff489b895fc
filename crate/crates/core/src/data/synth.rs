//! Stage-conditioned synthetic scEEG and PPG nights.
//!
//! Each modality is rendered from its own per-stage recipe. Two knobs make
//! the modalities confusable in complementary ways: a Light bout may be
//! rendered with the Wake recipe in scEEG, and Deep and REM bouts may swap
//! recipes in PPG.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hypnogram::{Hypnogram, Stage, N_STAGES};
use crate::dsp::{Modality, RawRecording};
use crate::error::{invalid, Result};
use crate::nn::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub low_hz: f64,
    pub high_hz: f64,
    pub amplitude: f64,
    /// Rate of a waxing and waning envelope; 0 for a steady rhythm.
    #[serde(default)]
    pub burst_hz: f64,
}

impl Oscillation {
    fn steady(low_hz: f64, high_hz: f64, amplitude: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            amplitude,
            burst_hz: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegRecipe {
    pub components: Vec<Oscillation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpgRecipe {
    pub heart_rate_bpm: f64,
    /// Standard deviation of beat-to-beat interval noise, seconds.
    pub ibi_jitter_s: f64,
    pub pulse_amplitude: f64,
    pub resp_rate_hz: f64,
    /// Respiratory modulation of baseline, amplitude and intervals.
    pub resp_depth: f64,
}

/// Systematic offsets applied to every subject, for cross-cohort transfer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub heart_rate_offset_bpm: f64,
    /// Multiplies every scEEG oscillation frequency.
    pub eeg_freq_scale: Option<f64>,
    pub eeg_noise_scale: Option<f64>,
    pub pulse_width_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub raw_rate_hz: f64,
    /// Row-stochastic per-epoch stage transitions, Wake/Light/Deep/REM order.
    pub transition: [[f64; N_STAGES]; N_STAGES],
    pub initial_stage: Stage,
    pub eeg_recipes: Vec<EegRecipe>,
    pub ppg_recipes: Vec<PpgRecipe>,
    pub eeg_noise: f64,
    pub ppg_noise: f64,
    /// Scale of per-subject offsets (gain, rhythm frequency, heart rate).
    pub subject_variability: f64,
    /// Probability that a Light bout is rendered with the Wake scEEG recipe.
    pub sceeg_light_wake_confusability: f64,
    /// Probability that a Deep or REM bout is rendered with the other's PPG recipe.
    pub ppg_deep_rem_confusability: f64,
    pub shift: DomainShift,
    pub subject_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 48,
            epochs_per_subject: 120,
            raw_rate_hz: 256.0,
            transition: [
                [0.90, 0.08, 0.01, 0.01],
                [0.03, 0.90, 0.05, 0.02],
                [0.01, 0.07, 0.92, 0.00],
                [0.02, 0.05, 0.00, 0.93],
            ],
            initial_stage: Stage::Wake,
            eeg_recipes: vec![
                EegRecipe {
                    components: vec![
                        Oscillation::steady(9.0, 11.0, 1.2),
                        Oscillation::steady(18.0, 26.0, 0.5),
                        Oscillation::steady(5.0, 7.0, 0.15),
                    ],
                },
                EegRecipe {
                    components: vec![
                        Oscillation::steady(4.5, 7.0, 0.9),
                        Oscillation {
                            low_hz: 12.0,
                            high_hz: 14.0,
                            amplitude: 0.9,
                            burst_hz: 0.2,
                        },
                        Oscillation::steady(1.0, 3.0, 0.3),
                    ],
                },
                EegRecipe {
                    components: vec![
                        Oscillation::steady(0.8, 2.5, 2.5),
                        Oscillation::steady(4.0, 7.0, 0.3),
                    ],
                },
                EegRecipe {
                    components: vec![
                        Oscillation::steady(4.5, 7.0, 0.6),
                        Oscillation::steady(18.0, 26.0, 0.4),
                        Oscillation::steady(8.0, 10.0, 0.2),
                    ],
                },
            ],
            ppg_recipes: vec![
                PpgRecipe {
                    heart_rate_bpm: 82.0,
                    ibi_jitter_s: 0.06,
                    pulse_amplitude: 0.8,
                    resp_rate_hz: 0.30,
                    resp_depth: 0.6,
                },
                PpgRecipe {
                    heart_rate_bpm: 62.0,
                    ibi_jitter_s: 0.035,
                    pulse_amplitude: 1.0,
                    resp_rate_hz: 0.25,
                    resp_depth: 0.8,
                },
                PpgRecipe {
                    heart_rate_bpm: 54.0,
                    ibi_jitter_s: 0.015,
                    pulse_amplitude: 1.2,
                    resp_rate_hz: 0.22,
                    resp_depth: 1.0,
                },
                PpgRecipe {
                    heart_rate_bpm: 70.0,
                    ibi_jitter_s: 0.07,
                    pulse_amplitude: 0.9,
                    resp_rate_hz: 0.32,
                    resp_depth: 0.5,
                },
            ],
            eeg_noise: 1.2,
            ppg_noise: 0.4,
            subject_variability: 1.0,
            sceeg_light_wake_confusability: 0.4,
            ppg_deep_rem_confusability: 0.4,
            shift: DomainShift::default(),
            subject_prefix: "sub".into(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.epochs_per_subject == 0 {
            return Err(invalid!("cohort needs at least one subject and one epoch"));
        }
        if !(self.raw_rate_hz >= 64.0 && self.raw_rate_hz.is_finite()) {
            return Err(invalid!("raw sampling rate {} Hz", self.raw_rate_hz));
        }
        for (i, row) in self.transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(invalid!("transition row {} is not a probability vector: {:?}", i, row));
            }
        }
        if self.eeg_recipes.len() != N_STAGES || self.ppg_recipes.len() != N_STAGES {
            return Err(invalid!("one scEEG and one PPG recipe per stage are required"));
        }
        let nyquist = self.raw_rate_hz / 2.0;
        for osc in self.eeg_recipes.iter().flat_map(|r| &r.components) {
            if !(osc.low_hz > 0.0 && osc.low_hz <= osc.high_hz && osc.high_hz < nyquist) {
                return Err(invalid!("oscillation band {}-{} Hz", osc.low_hz, osc.high_hz));
            }
        }
        for r in &self.ppg_recipes {
            if !(r.heart_rate_bpm > 20.0 && r.heart_rate_bpm < 200.0) {
                return Err(invalid!("heart rate {} bpm", r.heart_rate_bpm));
            }
        }
        for (name, p) in [
            ("sceeg_light_wake_confusability", self.sceeg_light_wake_confusability),
            ("ppg_deep_rem_confusability", self.ppg_deep_rem_confusability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid!("{} = {} outside [0, 1]", name, p));
            }
        }
        if self.eeg_noise < 0.0 || self.ppg_noise < 0.0 || self.subject_variability < 0.0 {
            return Err(invalid!("noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn subject_id(&self, index: usize) -> String {
        format!("{}{:03}", self.subject_prefix, index)
    }
}

/// One synthetic night.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    pub sceeg: RawRecording,
    pub ppg: RawRecording,
    pub hypnogram: Hypnogram,
    /// Recipe actually used per epoch, by modality.
    pub sceeg_rendered: Vec<Stage>,
    pub ppg_rendered: Vec<Stage>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SubjectData>> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| synth_subject(cfg, i, root.derive(i as u64)))
        .collect()
}

fn markov_stages(cfg: &SynthConfig, rng: &mut SeededRng) -> Vec<Stage> {
    let mut stages = Vec::with_capacity(cfg.epochs_per_subject);
    let mut current = cfg.initial_stage;
    stages.push(current);
    for _ in 1..cfg.epochs_per_subject {
        current = Stage::ALL[rng.categorical(&cfg.transition[current.index()])];
        stages.push(current);
    }
    stages
}

/// Recipe per epoch after the per-bout confusability draws.
fn rendered_stages(stages: &[Stage], cfg: &SynthConfig, rng: &mut SeededRng) -> (Vec<Stage>, Vec<Stage>) {
    let mut eeg = Vec::with_capacity(stages.len());
    let mut ppg = Vec::with_capacity(stages.len());
    let (mut eeg_swap, mut ppg_swap) = (false, false);
    for (i, s) in stages.iter().enumerate() {
        if i == 0 || stages[i - 1] != *s {
            eeg_swap = rng.bernoulli(cfg.sceeg_light_wake_confusability);
            ppg_swap = rng.bernoulli(cfg.ppg_deep_rem_confusability);
        }
        eeg.push(match s {
            Stage::Light if eeg_swap => Stage::Wake,
            other => *other,
        });
        ppg.push(match s {
            Stage::Deep if ppg_swap => Stage::Rem,
            Stage::Rem if ppg_swap => Stage::Deep,
            other => *other,
        });
    }
    (eeg, ppg)
}

struct SubjectTraits {
    eeg_gain: f64,
    freq_shift_hz: f64,
    heart_rate_offset: f64,
    pulse_gain: f64,
}

fn subject_traits(cfg: &SynthConfig, rng: &mut SeededRng) -> SubjectTraits {
    let v = cfg.subject_variability;
    SubjectTraits {
        eeg_gain: (1.0 + 0.2 * v * rng.normal()).max(0.3),
        freq_shift_hz: 0.4 * v * rng.normal(),
        heart_rate_offset: 3.0 * v * rng.normal() + cfg.shift.heart_rate_offset_bpm,
        pulse_gain: (1.0 + 0.15 * v * rng.normal()).max(0.3),
    }
}

fn synth_subject(cfg: &SynthConfig, index: usize, mut rng: SeededRng) -> Result<SubjectData> {
    let id = cfg.subject_id(index);
    let stages = markov_stages(cfg, &mut rng);
    let (eeg_stages, ppg_stages) = rendered_stages(&stages, cfg, &mut rng);
    let traits = subject_traits(cfg, &mut rng);
    let mut eeg_rng = rng.derive(1);
    let mut ppg_rng = rng.derive(2);
    let eeg = render_eeg(cfg, &eeg_stages, &traits, &mut eeg_rng);
    let ppg = render_ppg(cfg, &ppg_stages, &traits, &mut ppg_rng);
    Ok(SubjectData {
        sceeg: RawRecording::new(eeg, cfg.raw_rate_hz, Modality::ScEeg, id.clone(), "C4-M1")?,
        ppg: RawRecording::new(ppg, cfg.raw_rate_hz, Modality::Ppg, id.clone(), "PPG")?,
        hypnogram: Hypnogram::new(id.clone(), stages),
        subject_id: id,
        sceeg_rendered: eeg_stages,
        ppg_rendered: ppg_stages,
    })
}

const EPOCH_SECONDS: f64 = 30.0;

fn epoch_samples(cfg: &SynthConfig) -> usize {
    (cfg.raw_rate_hz * EPOCH_SECONDS).round() as usize
}

fn render_eeg(cfg: &SynthConfig, stages: &[Stage], traits: &SubjectTraits, rng: &mut SeededRng) -> Vec<f64> {
    let fs = cfg.raw_rate_hz;
    let n_epoch = epoch_samples(cfg);
    let freq_scale = cfg.shift.eeg_freq_scale.unwrap_or(1.0);
    let noise = cfg.eeg_noise * cfg.shift.eeg_noise_scale.unwrap_or(1.0);
    let nyquist_margin = fs / 2.0 - 1.0;
    let mut out = Vec::with_capacity(n_epoch * stages.len());
    let mut drift = 0.0;
    for (e, stage) in stages.iter().enumerate() {
        let recipe = &cfg.eeg_recipes[stage.index()];
        let waves: Vec<(f64, f64, f64, f64, f64)> = recipe
            .components
            .iter()
            .map(|osc| {
                let f = (rng.uniform(osc.low_hz, osc.high_hz) + traits.freq_shift_hz)
                    .max(0.3)
                    .min(nyquist_margin)
                    * freq_scale;
                let amp = osc.amplitude * (1.0 + 0.15 * rng.normal()).max(0.0);
                (f, amp, rng.uniform(0.0, 2.0 * PI), osc.burst_hz, rng.uniform(0.0, 2.0 * PI))
            })
            .collect();
        for i in 0..n_epoch {
            let t = (e * n_epoch + i) as f64 / fs;
            let mut v = 0.0;
            for &(f, amp, phase, burst, burst_phase) in &waves {
                let env = if burst > 0.0 {
                    let b = 0.5 * (1.0 + (2.0 * PI * burst * t + burst_phase).sin());
                    b * b * 2.0
                } else {
                    1.0
                };
                v += amp * env * (2.0 * PI * f * t + phase).sin();
            }
            drift = 0.98 * drift + 0.1 * noise * rng.normal();
            out.push(traits.eeg_gain * (v + drift + noise * rng.normal()));
        }
    }
    out
}

fn render_ppg(cfg: &SynthConfig, stages: &[Stage], traits: &SubjectTraits, rng: &mut SeededRng) -> Vec<f64> {
    let fs = cfg.raw_rate_hz;
    let n_epoch = epoch_samples(cfg);
    let n = n_epoch * stages.len();
    let duration = n as f64 / fs;
    let width = cfg.shift.pulse_width_scale.unwrap_or(1.0);
    let mut out = vec![0.0; n];

    // Respiration with a continuous phase across stage changes.
    let mut resp = vec![0.0; n];
    let mut phase = rng.uniform(0.0, 2.0 * PI);
    for (i, r) in resp.iter_mut().enumerate() {
        let recipe = &cfg.ppg_recipes[stages[i / n_epoch].index()];
        phase += 2.0 * PI * recipe.resp_rate_hz / fs;
        *r = phase.sin();
    }

    let stage_at = |t: f64| stages[((t * fs) as usize / n_epoch).min(stages.len() - 1)];
    let mut beat = rng.uniform(0.0, 1.0);
    while beat < duration {
        let recipe = &cfg.ppg_recipes[stage_at(beat).index()];
        let r = resp[((beat * fs) as usize).min(n - 1)];
        let amp = traits.pulse_gain * recipe.pulse_amplitude * (1.0 + 0.1 * recipe.resp_depth * r);
        let start = (beat * fs).ceil() as usize;
        let stop = (((beat + 0.9 * width) * fs) as usize).min(n);
        for (i, o) in out.iter_mut().enumerate().take(stop).skip(start) {
            let dt = i as f64 / fs - beat;
            let systolic = (-0.5 * ((dt - 0.15 * width) / (0.06 * width)).powi(2)).exp();
            let dicrotic = 0.4 * (-0.5 * ((dt - 0.40 * width) / (0.09 * width)).powi(2)).exp();
            *o += amp * (systolic + dicrotic);
        }
        let hr = (recipe.heart_rate_bpm + traits.heart_rate_offset).max(30.0);
        let ibi = 60.0 / hr * (1.0 + 0.04 * recipe.resp_depth * r) + recipe.ibi_jitter_s * rng.normal();
        beat += ibi.max(0.25);
    }

    for (i, o) in out.iter_mut().enumerate() {
        let recipe = &cfg.ppg_recipes[stages[i / n_epoch].index()];
        *o += 0.3 * recipe.resp_depth * resp[i] + cfg.ppg_noise * rng.normal();
    }
    out
}
