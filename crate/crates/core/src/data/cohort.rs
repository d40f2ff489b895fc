//! Paired, preprocessed nights and their on-disk layout.
//!
//! A cohort directory holds, per subject, `<id>.sceeg.srec`,
//! `<id>.ppg.srec` and `<id>.hyp.csv`, plus `subjects.json` listing the ids.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::container::RecordingContainer;
use super::hypnogram::{Hypnogram, Stage};
use super::synth::SubjectData;
use crate::dsp::{preprocess, Modality, PreprocessConfig, PreprocessedRecording};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Aligned preprocessed epochs of both modalities with reference stages.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectEpochs {
    pub subject_id: String,
    /// `[n × 3000]`
    pub sceeg: Tensor,
    /// `[n × 1024]`
    pub ppg: Tensor,
    pub stages: Vec<Stage>,
}

impl SubjectEpochs {
    pub fn new(sceeg: PreprocessedRecording, ppg: PreprocessedRecording, hyp: &Hypnogram) -> Result<Self> {
        let n = hyp.len();
        if sceeg.n_epochs() != n || ppg.n_epochs() != n {
            return Err(Error::Format(format!(
                "subject {}: {} scEEG and {} PPG epochs for {} scored epochs",
                hyp.subject_id,
                sceeg.n_epochs(),
                ppg.n_epochs(),
                n
            )));
        }
        Ok(Self {
            subject_id: hyp.subject_id.clone(),
            sceeg: sceeg.epochs,
            ppg: ppg.epochs,
            stages: hyp.stages.clone(),
        })
    }

    pub fn n_epochs(&self) -> usize {
        self.stages.len()
    }

    pub fn modality(&self, m: Modality) -> &Tensor {
        match m {
            Modality::ScEeg => &self.sceeg,
            Modality::Ppg => &self.ppg,
        }
    }
}

pub fn preprocess_subject(s: &SubjectData, cfg: &PreprocessConfig) -> Result<SubjectEpochs> {
    SubjectEpochs::new(preprocess(&s.sceeg, cfg)?, preprocess(&s.ppg, cfg)?, &s.hypnogram)
}

pub fn preprocess_cohort(subjects: &[SubjectData], cfg: &PreprocessConfig) -> Result<Vec<SubjectEpochs>> {
    subjects.par_iter().map(|s| preprocess_subject(s, cfg)).collect()
}

fn path_for(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}.{suffix}"))
}

fn write_ids(dir: &Path, ids: &[String]) -> Result<()> {
    std::fs::write(dir.join("subjects.json"), serde_json::to_string_pretty(ids)?)?;
    Ok(())
}

pub fn read_ids(dir: &Path) -> Result<Vec<String>> {
    Ok(serde_json::from_slice(&std::fs::read(dir.join("subjects.json"))?)?)
}

/// Writes raw recordings and hypnograms of a generated cohort.
pub fn save_raw_cohort(dir: &Path, subjects: &[SubjectData]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in subjects {
        RecordingContainer::from_raw(&s.sceeg).save(&path_for(dir, &s.subject_id, "sceeg.srec"))?;
        RecordingContainer::from_raw(&s.ppg).save(&path_for(dir, &s.subject_id, "ppg.srec"))?;
        s.hypnogram.save_csv(&path_for(dir, &s.subject_id, "hyp.csv"))?;
    }
    write_ids(dir, &subjects.iter().map(|s| s.subject_id.clone()).collect::<Vec<_>>())
}

pub fn modality_suffix(m: Modality) -> &'static str {
    match m {
        Modality::ScEeg => "sceeg.srec",
        Modality::Ppg => "ppg.srec",
    }
}

/// Preprocesses one modality of every subject in `input` into `output`,
/// copying hypnograms and the subject list alongside.
pub fn preprocess_dir(input: &Path, output: &Path, modality: Modality, cfg: &PreprocessConfig) -> Result<usize> {
    std::fs::create_dir_all(output)?;
    let ids = read_ids(input)?;
    ids.par_iter().try_for_each(|id| -> Result<()> {
        let raw = RecordingContainer::load(&path_for(input, id, modality_suffix(modality)))?.to_raw()?;
        if raw.modality != modality {
            return Err(Error::Format(format!("{id}: container holds {} not {}", raw.modality, modality)));
        }
        let pre = preprocess(&raw, cfg)?;
        RecordingContainer::from_preprocessed(&pre).save(&path_for(output, id, modality_suffix(modality)))?;
        std::fs::copy(path_for(input, id, "hyp.csv"), path_for(output, id, "hyp.csv"))?;
        Ok(())
    })?;
    write_ids(output, &ids)?;
    Ok(ids.len())
}

/// Loads preprocessed epochs of both modalities.
pub fn load_preprocessed_cohort(dir: &Path) -> Result<Vec<SubjectEpochs>> {
    read_ids(dir)?
        .par_iter()
        .map(|id| {
            let load = |m: Modality| -> Result<PreprocessedRecording> {
                let c = RecordingContainer::load(&path_for(dir, id, modality_suffix(m)))?;
                if !c.header.preprocessed {
                    return Err(Error::Format(format!("{id}: {m} recording is not preprocessed")));
                }
                c.to_preprocessed()
            };
            let hyp = Hypnogram::load_csv(id, &path_for(dir, id, "hyp.csv"))?;
            SubjectEpochs::new(load(Modality::ScEeg)?, load(Modality::Ppg)?, &hyp)
        })
        .collect()
}
