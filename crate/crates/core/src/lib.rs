//! Sleep staging from one EEG channel and a wrist PPG signal.
//!
//! Each modality has its own encoder that maps a window of 30 s epochs to
//! per-epoch features and stage probabilities. Three ways of combining them
//! are provided: a weighted average of the two probability sequences,
//! bidirectional cross-attention, and cross-attention followed by a
//! selective state-space block over the fused sequence.
//!
//! ```
//! use sleepfuse::data::Stage;
//! use sleepfuse::fusion::{score_fusion, FusionWeight};
//! use sleepfuse::metrics::argmax_stages;
//! use sleepfuse::nn::Tensor;
//!
//! let ppg = Tensor::matrix(1, 4, vec![0.1, 0.7, 0.1, 0.1])?;
//! let sceeg = Tensor::matrix(1, 4, vec![0.6, 0.3, 0.0, 0.1])?;
//! let fused = score_fusion(&ppg, &sceeg, FusionWeight::new(0.5)?)?;
//! assert_eq!(argmax_stages(&fused)?, vec![Stage::Light]);
//! # Ok::<(), sleepfuse::Error>(())
//! ```
//!
//! Modules, roughly in pipeline order: [`data`] (containers, hypnograms,
//! splits, the synthetic cohort), [`dsp`] (filters and epoching), [`nn`]
//! (tensors, autodiff, layers), [`encoder`], [`fusion`], [`train`],
//! [`metrics`], [`experiment`] and [`artifact`] (saved models).

pub mod artifact;
pub mod data;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
