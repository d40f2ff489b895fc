//! Optimization, training loops and latency measurement.

pub mod adam;
pub mod dataset;
pub mod fit;

pub use adam::{Adam, AdamConfig};
pub use fit::{
    evaluate, fine_tune, infer_ms, median_ms, predict, stage_pairs, train, EpochLog, Sample, SequenceModel,
    TrainConfig, TrainLog,
};
