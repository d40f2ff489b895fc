use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use sleepfuse::artifact::{
    evaluate_hypnograms, evaluate_subjects, read_meta, save_encoder, save_fusion, ArtifactMeta, FusionHead, Predictor,
};
use sleepfuse::data::{
    load_preprocessed_cohort, preprocess_dir, save_raw_cohort, split_subjects, synth_generate, Hypnogram,
    Partition, SplitManifest, SubjectEpochs, SynthConfig,
};
use sleepfuse::dsp::{Modality, PreprocessConfig, WindowLength};
use sleepfuse::encoder::{EncoderConfig, PpgConfig, SceegConfig};
use sleepfuse::experiment::{run_experiment, window_sweep, ExperimentConfig};
use sleepfuse::fusion::{grid_search_alpha, FusionConfig, FusionModel, Strategy};
use sleepfuse::metrics::{comparison_table, EvalReport, MEASURE_NAMES};
use sleepfuse::nn::{ParamStore, SeededRng};
use sleepfuse::train::dataset::{cache_outputs, encoder_samples, fusion_samples, partition};
use sleepfuse::train::{train, TrainConfig};

use crate::manifest::{manifest_path, RunManifest};
use crate::{svg, DataArgs, Scale};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error")]
    Usage(i32),
    #[error("configuration: {0}")]
    Config(sleepfuse::Error),
    #[error("data: {0}")]
    Data(sleepfuse::Error),
    #[error("model: {0}")]
    Model(sleepfuse::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(e.into()))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config(e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(e.into()))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(e.into()))
}

fn finish(m: RunManifest, outputs: &[PathBuf], out: &Path, is_dir: bool) -> Result<()> {
    m.finish(outputs, &manifest_path(out, is_dir)).map_err(CliError::Data)
}

struct Loaded {
    cohort: Vec<SubjectEpochs>,
    split: SplitManifest,
}

impl Loaded {
    fn open(data: &DataArgs) -> Result<Self> {
        let cohort = load_preprocessed_cohort(&data.data).map_err(CliError::Data)?;
        let split = SplitManifest::load(&data.split).map_err(CliError::Data)?;
        Ok(Self { cohort, split })
    }

    fn part(&self, p: Partition) -> Result<Vec<&SubjectEpochs>> {
        partition(&self.cohort, &self.split, p).map_err(CliError::Data)
    }
}

pub fn synth(args: &[String], config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = read_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::Config)?;
    let m = RunManifest::new(args, config.as_deref(), Some(cfg.seed));
    let subjects = synth_generate(&cfg).map_err(CliError::Data)?;
    save_raw_cohort(&out, &subjects).map_err(CliError::Data)?;
    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let split = split_subjects(&ids, (0.6, 0.2, 0.2), cfg.seed).map_err(CliError::Data)?;
    let split_path = out.join("splits.json");
    split.save(&split_path).map_err(CliError::Data)?;
    eprintln!("{} subjects written to {}", ids.len(), out.display());
    finish(m, &[out.clone(), split_path], &out, true)
}

pub fn preprocess(
    args: &[String],
    modality: Modality,
    input: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
) -> Result<()> {
    let cfg: PreprocessConfig = read_config(config.as_deref())?;
    cfg.validate().map_err(CliError::Config)?;
    let m = RunManifest::new(args, config.as_deref(), None).input(&input);
    let n = preprocess_dir(&input, &out, modality, &cfg).map_err(CliError::Data)?;
    eprintln!("{n} {modality} recordings preprocessed into {}", out.display());
    finish(m, std::slice::from_ref(&out), &out, true)
}

pub struct EncoderJob {
    pub modality: Modality,
    pub window: WindowLength,
    pub config: Option<PathBuf>,
    pub scale: Scale,
}

fn scaled_config(modality: Modality, t: usize, scale: Scale) -> EncoderConfig {
    match (modality, scale) {
        (Modality::ScEeg, Scale::Tiny) => EncoderConfig::Sceeg(SceegConfig::tiny(t)),
        (Modality::ScEeg, Scale::Full) => EncoderConfig::Sceeg(SceegConfig::full(t)),
        (Modality::Ppg, Scale::Tiny) => EncoderConfig::Ppg(PpgConfig::tiny(t)),
        (Modality::Ppg, Scale::Full) => EncoderConfig::Ppg(PpgConfig::full(t)),
    }
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut tc: TrainConfig = read_config(path)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    tc.validate().map_err(CliError::Config)?;
    Ok(tc)
}

pub fn train_encoder(
    args: &[String],
    job: EncoderJob,
    data: DataArgs,
    out: PathBuf,
    train_cfg: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let t = job.window.epochs();
    let cfg = match &job.config {
        Some(p) => read_json::<EncoderConfig>(p)?,
        None => scaled_config(job.modality, t, job.scale),
    };
    if cfg.modality() != job.modality || cfg.window() != t {
        return Err(CliError::Config(sleepfuse::Error::Invalid(format!(
            "encoder config is for {} over {} epochs, not {} over {t}",
            cfg.modality(),
            cfg.window(),
            job.modality
        ))));
    }
    let tc = train_config(train_cfg.as_deref(), seed)?;
    let m = RunManifest::new(args, job.config.as_deref(), Some(tc.seed))
        .input(&data.data)
        .input(&data.split);

    let loaded = Loaded::open(&data)?;
    let samples = |p| -> Result<_> {
        encoder_samples(&loaded.part(p)?, job.modality, t).map_err(CliError::Data)
    };
    let (train_set, val_set) = (samples(Partition::Train)?, samples(Partition::Val)?);
    let mut store = ParamStore::new();
    let enc = cfg
        .build(&mut store, &mut SeededRng::new(tc.seed))
        .map_err(CliError::Config)?;
    let log = train(&enc, &mut store, &train_set, &val_set, &tc).map_err(CliError::Model)?;
    if let Some(best) = log.best() {
        eprintln!("best validation kappa {:.4} at epoch {}", best.val_kappa, best.epoch);
    }
    save_encoder(&out, &enc, &store).map_err(CliError::Model)?;
    let log_path = out.with_extension("log.jsonl");
    log.save_jsonl(&log_path).map_err(CliError::Data)?;
    let (meta, ckpt) = sleepfuse::artifact::artifact_paths(&out);
    finish(m, &[meta, ckpt, log_path], &out, false)
}

fn load_encoder_checked(path: &Path, modality: Modality) -> Result<(sleepfuse::encoder::Encoder, ParamStore)> {
    let (enc, store) = sleepfuse::artifact::load_encoder(path).map_err(CliError::Model)?;
    if enc.config().modality() != modality {
        return Err(CliError::Model(sleepfuse::Error::Invalid(format!(
            "{} holds a {} encoder, expected {modality}",
            path.display(),
            enc.config().modality()
        ))));
    }
    Ok((enc, store))
}

#[allow(clippy::too_many_arguments)]
pub fn train_fusion(
    args: &[String],
    strategy: Strategy,
    [sceeg_path, ppg_path]: [PathBuf; 2],
    data: DataArgs,
    out: PathBuf,
    config: Option<PathBuf>,
    train_cfg: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let (s_enc, s_store) = load_encoder_checked(&sceeg_path, Modality::ScEeg)?;
    let (p_enc, p_store) = load_encoder_checked(&ppg_path, Modality::Ppg)?;
    let t = s_enc.config().window();
    if p_enc.config().window() != t {
        return Err(CliError::Model(sleepfuse::Error::Invalid(format!(
            "encoder windows differ: {t} and {} epochs",
            p_enc.config().window()
        ))));
    }
    let tc = train_config(train_cfg.as_deref(), seed)?;
    let m = RunManifest::new(args, config.as_deref(), Some(tc.seed))
        .input(&sceeg_path)
        .input(&ppg_path)
        .input(&data.data)
        .input(&data.split);

    let loaded = Loaded::open(&data)?;
    let cached = |p| -> Result<_> {
        let subjects = loaded.part(p)?;
        let s = encoder_samples(&subjects, Modality::ScEeg, t).map_err(CliError::Data)?;
        let pp = encoder_samples(&subjects, Modality::Ppg, t).map_err(CliError::Data)?;
        let cs = cache_outputs(&s_enc, &s_store, &s).map_err(CliError::Model)?;
        let cp = cache_outputs(&p_enc, &p_store, &pp).map_err(CliError::Model)?;
        Ok((cs, cp, s))
    };
    let (va_s, va_p, va_targets) = cached(Partition::Val)?;

    let head = if strategy == Strategy::Score {
        let labels: Vec<_> = va_targets.iter().flat_map(|w| w.targets.iter().copied()).collect();
        let search = grid_search_alpha(&va_p.probs, &va_s.probs, &labels).map_err(CliError::Model)?;
        eprintln!("alpha {:.1}", search.alpha.value());
        FusionHead::Score(search)
    } else {
        let dim = s_enc.config().feature_dim();
        let cfg = match &config {
            Some(p) => read_json::<FusionConfig>(p)?,
            None if dim == FusionConfig::full().dim => FusionConfig::full(),
            None => FusionConfig::tiny(dim),
        };
        let (tr_s, tr_p, tr_targets) = cached(Partition::Train)?;
        let f_train = fusion_samples(&tr_s, &tr_p, &tr_targets).map_err(CliError::Data)?;
        let f_val = fusion_samples(&va_s, &va_p, &va_targets).map_err(CliError::Data)?;
        let mut store = ParamStore::new();
        let model = FusionModel::new(&cfg, strategy, &mut store, &mut SeededRng::new(tc.seed)).map_err(CliError::Config)?;
        let log = train(&model, &mut store, &f_train, &f_val, &tc).map_err(CliError::Model)?;
        if let Some(best) = log.best() {
            eprintln!("best validation kappa {:.4} at epoch {}", best.val_kappa, best.epoch);
        }
        log.save_jsonl(&out.with_extension("log.jsonl")).map_err(CliError::Data)?;
        FusionHead::Learned(model, store)
    };
    save_fusion(&out, &head, &sceeg_path, &ppg_path).map_err(CliError::Model)?;
    let (meta, ckpt) = sleepfuse::artifact::artifact_paths(&out);
    let mut outputs = vec![meta];
    if matches!(head, FusionHead::Learned(..)) {
        outputs.push(ckpt);
        outputs.push(out.with_extension("log.jsonl"));
    }
    finish(m, &outputs, &out, false)
}

pub fn evaluate(
    args: &[String],
    model: Option<PathBuf>,
    predictions: Option<PathBuf>,
    data: DataArgs,
    part: Partition,
    report_path: PathBuf,
) -> Result<()> {
    let mut m = RunManifest::new(args, None, None).input(&data.data).input(&data.split);
    let loaded = Loaded::open(&data)?;
    let subjects = loaded.part(part)?;
    let report = match (model, predictions) {
        (Some(path), _) => {
            m = m.input(&path);
            let predictor = Predictor::load(&path).map_err(CliError::Model)?;
            let mut r = evaluate_subjects(&predictor, &subjects).map_err(CliError::Model)?;
            r.params = Some(predictor.params());
            r
        }
        (None, Some(dir)) => {
            m = m.input(&dir);
            let predicted = subjects
                .iter()
                .map(|s| {
                    Hypnogram::load_csv(&s.subject_id, &dir.join(format!("{}.hyp.csv", s.subject_id)))
                        .map(|h| h.stages)
                })
                .collect::<sleepfuse::Result<Vec<_>>>()
                .map_err(CliError::Data)?;
            let name = dir.file_name().map_or("predictions".into(), |n| n.to_string_lossy().into_owned());
            evaluate_hypnograms(&name, &subjects, &predicted).map_err(CliError::Data)?
        }
        (None, None) => return Err(CliError::Usage(2)),
    };
    print!("{}", report.to_text());
    write_text(&report_path, &(report.to_json() + "\n"))?;
    finish(m, std::slice::from_ref(&report_path), &report_path, false)
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    args: &[String],
    modality: Modality,
    data: DataArgs,
    out: PathBuf,
    windows: Vec<WindowLength>,
    scale: Scale,
    train_cfg: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let tc = train_config(train_cfg.as_deref(), seed)?;
    let m = RunManifest::new(args, train_cfg.as_deref(), Some(tc.seed))
        .input(&data.data)
        .input(&data.split);
    let loaded = Loaded::open(&data)?;
    let ts: Vec<usize> = windows.iter().map(|w| w.epochs()).collect();
    let report = window_sweep(modality, &loaded.cohort, &loaded.split, &ts, |t| scaled_config(modality, t, scale), &tc)
        .map_err(|e| match e {
            sleepfuse::Error::Degenerate(_) => CliError::Data(e),
            e => CliError::Model(e),
        })?;
    print!("{}", report.to_text());
    let text = out.with_extension("txt");
    write_text(&out, &(report.to_json() + "\n"))?;
    write_text(&text, &report.to_text())?;
    finish(m, &[out.clone(), text], &out, false)
}

fn load_report(path: &Path) -> Result<EvalReport> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(e.into()))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(e.into()))
}

pub fn report(args: &[String], compare: Vec<PathBuf>, alpha: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let mut m = RunManifest::new(args, None, None);
    let reports = compare
        .iter()
        .map(|p| load_report(p))
        .collect::<Result<Vec<_>>>()?;
    for p in &compare {
        m = m.input(p);
    }
    let mut outputs = Vec::new();
    let table = comparison_table(&reports);
    print!("{table}");
    let table_path = out.join("comparison.txt");
    write_text(&table_path, &table)?;
    outputs.push(table_path);

    let with_mae: Vec<(String, Vec<f64>)> = reports
        .iter()
        .filter_map(|r| r.measures_mae.map(|mae| (r.model.clone(), mae.values().to_vec())))
        .collect();
    if !with_mae.is_empty() {
        // TST is in minutes; the fractions and efficiency are percentages.
        let split_at = 1;
        let minutes: Vec<_> = with_mae.iter().map(|(n, v)| (n.clone(), v[..split_at].to_vec())).collect();
        let pct: Vec<_> = with_mae.iter().map(|(n, v)| (n.clone(), v[split_at..].to_vec())).collect();
        for (file, title, groups, series) in [
            ("mae_tst.svg", "Sleep-measure MAE (min)", &MEASURE_NAMES[..split_at], minutes),
            ("mae_pct.svg", "Sleep-measure MAE (%)", &MEASURE_NAMES[split_at..], pct),
        ] {
            let path = out.join(file);
            write_text(&path, &svg::grouped_bars(title, groups, &series))?;
            outputs.push(path);
        }
    }

    if let Some(a) = alpha {
        m = m.input(&a);
        let search = match read_meta(&a).map_err(CliError::Model)? {
            ArtifactMeta::Fusion { alpha: Some(s), .. } => s,
            _ => {
                return Err(CliError::Model(sleepfuse::Error::Invalid(format!(
                    "{} is not a score-fusion artifact",
                    a.display()
                ))))
            }
        };
        let points: Vec<(f64, f64)> = search.curve.iter().map(|(w, k)| (w.value(), *k)).collect();
        let path = out.join("alpha_curve.svg");
        write_text(&path, &svg::alpha_curve(&points, search.alpha.value()))?;
        outputs.push(path);
    }
    finish(m, &outputs, &out, true)
}

pub fn experiment(args: &[String], config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg: ExperimentConfig = read_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate().map_err(CliError::Config)?;
    let m = RunManifest::new(args, config.as_deref(), Some(cfg.seed));
    let outcome = run_experiment(&cfg).map_err(CliError::Model)?;
    let r = &outcome.report;
    let mut rows = vec![r.sceeg.clone(), r.ppg.clone(), r.score.clone(), r.xattn.clone(), r.mamba.clone()];
    rows[2].params = Some(0);
    let table = comparison_table(&rows);
    print!("{table}");
    println!("alpha {:.1}", r.alpha.alpha.value());

    let report_path = out.join("report.json");
    let table_path = out.join("comparison.txt");
    let curve_path = out.join("alpha_curve.svg");
    write_text(&report_path, &(r.to_json() + "\n"))?;
    write_text(&table_path, &table)?;
    let points: Vec<(f64, f64)> = r.alpha.curve.iter().map(|(w, k)| (w.value(), *k)).collect();
    write_text(&curve_path, &svg::alpha_curve(&points, r.alpha.alpha.value()))?;

    let (s_path, p_path) = (out.join("sceeg"), out.join("ppg"));
    save_encoder(&s_path, &outcome.sceeg.0, &outcome.sceeg.1).map_err(CliError::Model)?;
    save_encoder(&p_path, &outcome.ppg.0, &outcome.ppg.1).map_err(CliError::Model)?;
    save_fusion(&out.join("score"), &FusionHead::Score(r.alpha.clone()), &s_path, &p_path).map_err(CliError::Model)?;
    let (xm, xs) = outcome.xattn;
    save_fusion(&out.join("xattn"), &FusionHead::Learned(xm, xs), &s_path, &p_path).map_err(CliError::Model)?;
    let (mm, ms) = outcome.mamba;
    save_fusion(&out.join("mamba"), &FusionHead::Learned(mm, ms), &s_path, &p_path).map_err(CliError::Model)?;
    finish(m, &[report_path, table_path, curve_path], &out, true)
}
