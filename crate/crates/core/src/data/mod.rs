//! Recording containers, hypnograms, subject splits and the synthetic cohort.

pub mod cohort;
pub mod container;
pub mod hypnogram;
pub mod split;
pub mod synth;

pub use cohort::{
    load_preprocessed_cohort, preprocess_cohort, preprocess_dir, preprocess_subject, read_ids, save_raw_cohort, SubjectEpochs,
};
pub use container::{ContainerHeader, RecordingContainer};
pub use hypnogram::{map_aasm_to_4class, AasmLabel, Hypnogram, LabelMapping, LabelScheme, Stage, N_STAGES};
pub use split::{split_subjects, Partition, SplitManifest};
pub use synth::{synth_generate, DomainShift, EegRecipe, Oscillation, PpgRecipe, SubjectData, SynthConfig};
