//! Classification agreement and sleep-architecture measures.

pub mod confusion;
pub mod report;
pub mod sleep;

pub use confusion::{argmax_stages, class_metrics, confusion, kappa, ClassReport, ClassScores, ConfusionMatrix};
pub use report::{comparison_table, confusion_table, format_params, EvalReport, StageScores};
pub use sleep::{measures_mae, sleep_measures, MeasuresMae, SleepMeasures, EPOCH_MINUTES, MEASURE_NAMES};
