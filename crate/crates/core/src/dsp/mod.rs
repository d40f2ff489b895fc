//! Filtering, resampling, normalization and epoching of raw signals.

pub mod epochs;
pub mod iir;
pub mod normalize;
pub mod pipeline;
pub mod resample;

pub use epochs::{build_windows, segment_epochs, EpochWindow, Modality, WindowLength, WINDOW_EPOCHS};
pub use iir::{design_cheby2_lowpass, Biquad, FilterCascade, FilterPhase};
pub use normalize::{clip_sd, moments, zscore_recording};
pub use pipeline::{
    bandpass_sceeg, normalized_signal, preprocess, PreprocessConfig, PreprocessedRecording, RawRecording,
};
pub use resample::{resample, Resampler};
