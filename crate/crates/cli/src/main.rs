//! `mdi`: command-line driver for the micro-dialect identification pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation failure,
//! 3 numeric failure (non-finite loss).

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Invalid invocation or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "mdi", version, about = "Micro-dialect identification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a configuration key (`key=value`); repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Increase log verbosity on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelKind {
    Diagloss,
    Codesw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    Random,
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchName {
    Single,
    MtlCommon,
    MtlSpec,
    HamtlCity,
    HamtlCountry,
    Encoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudentName {
    HamtlCity,
    HamtlCountry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeName {
    Agnostic,
    Specific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeName {
    Weak,
    #[value(name = "weak+gold")]
    WeakPlusGold,
    #[value(name = "weak-then-gold")]
    WeakThenGold,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic city/state/country corpus.
    Synth {
        /// Directory for corpus.jsonl, train.jsonl, test.jsonl and gazetteer.tsv.
        #[arg(long)]
        out: PathBuf,
        /// Write the gazetteer here instead of the output directory.
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Drop retweets, normalize text and filter short tweets.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a proxy-labelled dataset.
    Label {
        kind: LabelKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split a corpus into TRAIN/DEV/TEST and write the manifest.
    Split {
        kind: SplitKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        setting: Option<String>,
        #[arg(long)]
        run: Option<String>,
        /// Directory for train/dev/test JSONL files.
        #[arg(long)]
        write_dir: Option<PathBuf>,
    },
    /// Train a classifier and write its checkpoint.
    Train {
        #[arg(long, value_enum)]
        arch: ArchName,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Auxiliary tasks, comma separated (diagloss, codesw).
        #[arg(long, value_delimiter = ',')]
        aux: Vec<String>,
        /// Records for the auxiliary tasks; defaults to the training file.
        #[arg(long)]
        aux_data: Option<PathBuf>,
        /// Main task(s) for single-task and encoder models, comma separated.
        #[arg(long, value_delimiter = ',')]
        task: Vec<String>,
        /// Pretrained encoder checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-LM pretraining of an encoder.
    PretrainMlm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an HA-MTL student on a teacher's logits.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, value_enum)]
        student: StudentName,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-record class probabilities.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select confident predictions on unlabelled data as pseudo-labels.
    Selftrain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeName,
        #[arg(long)]
        pct: u32,
        #[arg(long, default_value = "city")]
        level: String,
        /// Gazetteer used to fill coarser pseudo-labels.
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        /// Gold TRAIN to augment with the pseudo-labelled records.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Files whose record ids must never enter the augmented TRAIN.
        #[arg(long)]
        exclude: Vec<PathBuf>,
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train under a noisy-label regime.
    Regime {
        #[arg(value_enum)]
        regime: RegimeName,
        #[arg(long)]
        auto: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "single")]
        arch: ArchName,
        #[arg(long, value_delimiter = ',')]
        task: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove records an MSA/DA classifier predicts as MSA.
    MsaFilter {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "city")]
        level: String,
    },
    /// Score a model (or a predictions file) and write a metrics report.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// JSONL rows `{id, user_id, gold, pred, confidence}` instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "city")]
        level: String,
        /// Project city predictions to `--level` through the hierarchy.
        #[arg(long)]
        project: bool,
        #[arg(long)]
        user_level: bool,
        #[arg(long)]
        tau: Option<f64>,
        /// Gazetteer TSV; enables distance metrics.
        #[arg(long)]
        geo: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cohen's kappa between two label files (one label per line).
    Kappa { a: PathBuf, b: PathBuf },
    /// Export attention weights per token and site as JSONL.
    AttnDump {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Maps an error chain to the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<mdi::models::ModelError>() {
            if e.is_numeric() {
                return 3;
            }
        }
        if let Some(mdi::semisup::SemisupError::Model(e)) = cause.downcast_ref::<mdi::semisup::SemisupError>() {
            if e.is_numeric() {
                return 3;
            }
        }
        if let Some(nncore::NnError::NonFiniteLoss(_)) = cause.downcast_ref::<nncore::NnError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
