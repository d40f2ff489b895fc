//! Per-modality preprocessing chains.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::epochs::{segment_epochs, Modality};
use super::iir::{
    design_butterworth_highpass, design_butterworth_lowpass, design_cheby2_lowpass, FilterCascade,
    FilterPhase,
};
use super::normalize::{clip_sd, zscore_recording};
use super::resample::Resampler;
use crate::error::{invalid, Result};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub samples: Vec<f64>,
    pub rate_hz: f64,
    pub modality: Modality,
    pub subject_id: String,
    pub channel: String,
}

impl RawRecording {
    pub fn new(
        samples: Vec<f64>,
        rate_hz: f64,
        modality: Modality,
        subject_id: impl Into<String>,
        channel: impl Into<String>,
    ) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(invalid!("sampling rate {} Hz", rate_hz));
        }
        if samples.is_empty() {
            return Err(invalid!("recording has no samples"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("sample {} is not finite", i));
        }
        Ok(Self {
            samples,
            rate_hz,
            modality,
            subject_id: subject_id.into(),
            channel: channel.into(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub sceeg_band: (f64, f64),
    pub sceeg_highpass_order: usize,
    pub sceeg_lowpass_order: usize,
    pub sceeg_epoch_len: usize,
    pub ppg_cutoff: f64,
    pub ppg_filter_order: usize,
    pub ppg_stopband_db: f64,
    pub ppg_epoch_len: usize,
    pub clip_sigma: f64,
    pub epoch_seconds: f64,
    pub phase: FilterPhase,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sceeg_band: (0.3, 35.0),
            sceeg_highpass_order: 4,
            sceeg_lowpass_order: 8,
            sceeg_epoch_len: 3000,
            ppg_cutoff: 8.0,
            ppg_filter_order: 8,
            ppg_stopband_db: 40.0,
            ppg_epoch_len: 1024,
            clip_sigma: 3.0,
            epoch_seconds: 30.0,
            phase: FilterPhase::Causal,
        }
    }
}

impl PreprocessConfig {
    pub fn epoch_len(&self, modality: Modality) -> usize {
        match modality {
            Modality::ScEeg => self.sceeg_epoch_len,
            Modality::Ppg => self.ppg_epoch_len,
        }
    }

    /// Target rate implied by the samples-per-epoch contract.
    pub fn target_rate(&self, modality: Modality) -> f64 {
        self.epoch_len(modality) as f64 / self.epoch_seconds
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sceeg_band;
        if !(lo > 0.0 && hi > lo) {
            return Err(invalid!("scEEG band ({}, {}) Hz", lo, hi));
        }
        if self.sceeg_epoch_len == 0 || self.ppg_epoch_len == 0 || self.epoch_seconds <= 0.0 {
            return Err(invalid!("epoch lengths and duration must be positive"));
        }
        if self.clip_sigma <= 0.0 {
            return Err(invalid!("clip threshold {}σ", self.clip_sigma));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn ppg_lowpass(&self, rate_hz: f64) -> Result<FilterCascade> {
        design_cheby2_lowpass(self.ppg_filter_order, self.ppg_cutoff, self.ppg_stopband_db, rate_hz)
    }

    pub fn sceeg_bandpass(&self, rate_hz: f64) -> Result<FilterCascade> {
        let (lo, hi) = self.sceeg_band;
        if rate_hz <= 2.0 * hi {
            return Err(invalid!(
                "sampling rate {} Hz too low for a {}-{} Hz band",
                rate_hz,
                lo,
                hi
            ));
        }
        Ok(design_butterworth_highpass(self.sceeg_highpass_order, lo, rate_hz)?
            .then(design_butterworth_lowpass(self.sceeg_lowpass_order, hi, rate_hz)?))
    }
}

/// Normalized epochs of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedRecording {
    pub subject_id: String,
    pub channel: String,
    pub modality: Modality,
    pub rate_hz: f64,
    /// `[n_epochs × epoch_len]`
    pub epochs: Tensor,
    pub config_hash: String,
}

impl PreprocessedRecording {
    pub fn n_epochs(&self) -> usize {
        self.epochs.rows()
    }
}

pub fn bandpass_sceeg(signal: &[f64], rate_hz: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    Ok(cfg.sceeg_bandpass(rate_hz)?.filter(signal, cfg.phase))
}

/// Continuous normalized signal before segmentation.
pub fn normalized_signal(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let target = cfg.target_rate(rec.modality);
    let resampler = Resampler::from_rates(rec.rate_hz, target)?;
    match rec.modality {
        Modality::ScEeg => {
            let filtered = bandpass_sceeg(&rec.samples, rec.rate_hz, cfg)?;
            zscore_recording(&resampler.apply(&filtered)?)
        }
        Modality::Ppg => {
            let filtered = cfg.ppg_lowpass(rec.rate_hz)?.filter(&rec.samples, cfg.phase);
            let resampled = resampler.apply(&filtered)?;
            zscore_recording(&clip_sd(&resampled, cfg.clip_sigma))
        }
    }
}

pub fn preprocess(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<PreprocessedRecording> {
    let signal = normalized_signal(rec, cfg)?;
    Ok(PreprocessedRecording {
        subject_id: rec.subject_id.clone(),
        channel: rec.channel.clone(),
        modality: rec.modality,
        rate_hz: cfg.target_rate(rec.modality),
        epochs: segment_epochs(&signal, cfg.epoch_len(rec.modality))?,
        config_hash: cfg.hash(),
    })
}
