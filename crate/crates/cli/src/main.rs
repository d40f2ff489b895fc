//! `sfus`: run the staging pipeline from the shell.

mod commands;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sleepfuse::data::Partition;
use sleepfuse::dsp::{Modality, WindowLength};
use sleepfuse::fusion::Strategy;

#[derive(Debug, Parser)]
#[command(name = "sfus", version, about = "Sleep staging from single-channel EEG and PPG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    /// Desk-scale widths for synthetic experiments.
    Tiny,
    /// Full-size models.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PartitionArg {
    Train,
    Val,
    Test,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Val => Partition::Val,
            PartitionArg::Test => Partition::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Preprocessed cohort directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Subject split manifest.
    #[arg(long)]
    pub split: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its subject split.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Filter, resample, normalize and epoch one modality of a cohort.
    Preprocess {
        #[arg(long)]
        modality: Modality,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a unimodal encoder.
    TrainEncoder {
        #[arg(long)]
        modality: Modality,
        #[arg(long, default_value = "3min")]
        window: WindowLength,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Encoder configuration; defaults to `--scale`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Scale::Tiny)]
        scale: Scale,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fuse two trained encoders.
    TrainFusion {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        sceeg: PathBuf,
        #[arg(long)]
        ppg: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a model, or stored hypnograms, against the reference stages.
    Evaluate {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        model: Option<PathBuf>,
        /// Directory of `<subject>.hyp.csv` predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
        partition: PartitionArg,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and test one encoder per window length.
    SweepWindow {
        #[arg(long)]
        modality: Modality,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = sleepfuse::dsp::WINDOW_EPOCHS.map(|t| WindowLength::new(t).unwrap()))]
        windows: Vec<WindowLength>,
        #[arg(long, value_enum, default_value_t = Scale::Tiny)]
        scale: Scale,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare evaluation reports and draw the fusion-weight and sleep-measure plots.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        compare: Vec<PathBuf>,
        /// Score-fusion artifact whose weight search to plot.
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic end-to-end comparison of all fusion strategies.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat the command recorded in a run manifest.
    Rerun { manifest: PathBuf },
}

fn configure_threads() {
    if let Some(n) = std::env::var("SFUS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Ignored if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(args: Vec<String>) -> Result<(), commands::CliError> {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.exit_code() {
                0 => Ok(()),
                code => Err(commands::CliError::Usage(code)),
            };
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).cloned().collect();
    match cli.command {
        Command::Synth { config, out, seed } => commands::synth(&recorded, config, out, seed),
        Command::Preprocess {
            modality,
            input,
            out,
            config,
        } => commands::preprocess(&recorded, modality, input, out, config),
        Command::TrainEncoder {
            modality,
            window,
            data,
            out,
            config,
            scale,
            train_config,
            seed,
        } => commands::train_encoder(
            &recorded,
            commands::EncoderJob {
                modality,
                window,
                config,
                scale,
            },
            data,
            out,
            train_config,
            seed,
        ),
        Command::TrainFusion {
            strategy,
            sceeg,
            ppg,
            data,
            out,
            config,
            train_config,
            seed,
        } => commands::train_fusion(&recorded, strategy, [sceeg, ppg], data, out, config, train_config, seed),
        Command::Evaluate {
            model,
            predictions,
            data,
            partition,
            report,
        } => commands::evaluate(&recorded, model, predictions, data, partition.into(), report),
        Command::SweepWindow {
            modality,
            data,
            out,
            windows,
            scale,
            train_config,
            seed,
        } => commands::sweep(&recorded, modality, data, out, windows, scale, train_config, seed),
        Command::Report { compare, alpha, out } => commands::report(&recorded, compare, alpha, out),
        Command::Experiment { config, out, seed } => commands::experiment(&recorded, config, out, seed),
        Command::Rerun { manifest } => {
            let m = manifest::RunManifest::load(&manifest).map_err(commands::CliError::Config)?;
            let mut argv = vec![args[0].clone()];
            argv.extend(m.args);
            run(argv)
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, commands::CliError::Usage(_)) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
