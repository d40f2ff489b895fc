//! Window samples built from preprocessed subjects and cached encoder outputs.

use rayon::prelude::*;

use super::fit::Sample;
use crate::data::{SplitManifest, SubjectEpochs};
use crate::data::split::Partition;
use crate::dsp::{build_windows, Modality};
use crate::encoder::Encoder;
use crate::error::{invalid, Error, Result};
use crate::fusion::FusionInput;
use crate::nn::{ParamStore, Tensor};

/// Non-overlapping `t`-epoch windows of every subject, in subject order.
pub fn encoder_samples(subjects: &[&SubjectEpochs], modality: Modality, t: usize) -> Result<Vec<Sample<Tensor>>> {
    let mut out = Vec::new();
    for s in subjects {
        for w in build_windows(s.modality(modality), t, t, modality, &s.subject_id)? {
            let targets = s.stages[w.start_epoch..w.start_epoch + t].to_vec();
            out.push(Sample {
                input: w.epochs,
                targets,
            });
        }
    }
    Ok(out)
}

/// Subjects of one partition, in manifest order.
pub fn partition<'a>(cohort: &'a [SubjectEpochs], split: &SplitManifest, part: Partition) -> Result<Vec<&'a SubjectEpochs>> {
    split
        .subjects(part)
        .iter()
        .map(|id| {
            cohort
                .iter()
                .find(|s| &s.subject_id == id)
                .ok_or_else(|| invalid!("split names unknown subject {:?}", id))
        })
        .collect()
}

/// Frozen-encoder outputs for a list of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedOutputs {
    /// `[T×d]` per window.
    pub features: Vec<Tensor>,
    /// `[T×4]` per window.
    pub probs: Vec<Tensor>,
}

pub fn cache_outputs(encoder: &Encoder, store: &ParamStore, samples: &[Sample<Tensor>]) -> Result<CachedOutputs> {
    let pairs: Vec<(Tensor, Tensor)> = samples
        .par_iter()
        .map(|s| encoder.infer(store, &s.input))
        .collect::<Result<_>>()?;
    let (features, probs) = pairs.into_iter().unzip();
    Ok(CachedOutputs { features, probs })
}

/// Pairs cached features of both modalities with the shared targets.
pub fn fusion_samples(
    sceeg: &CachedOutputs,
    ppg: &CachedOutputs,
    targets: &[Sample<Tensor>],
) -> Result<Vec<Sample<FusionInput>>> {
    if sceeg.features.len() != ppg.features.len() || sceeg.features.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} scEEG, {} PPG and {} reference windows",
            sceeg.features.len(),
            ppg.features.len(),
            targets.len()
        )));
    }
    Ok(sceeg
        .features
        .iter()
        .zip(&ppg.features)
        .zip(targets)
        .map(|((s, p), t)| Sample {
            input: FusionInput {
                sceeg: s.clone(),
                ppg: p.clone(),
            },
            targets: t.targets.clone(),
        })
        .collect())
}
