mod data;
mod eval;
mod model;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mdi::corpus::{read_records, Level, TweetRecord};
use mdi::models::{
    Architecture, BiGruConfig, Checkpoint, EncoderConfig, HaMtlConfig, HaOrder, Model, MtlAttention, Task,
};
use serde::Serialize;

use crate::config::Settings;
use crate::manifest::Recorder;
use crate::{ArchName, Cli, Command, UsageError};

/// Per-run state shared by all commands.
pub struct Ctx {
    pub settings: Settings,
    pub seed: u64,
    pub json: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let mut overrides = Vec::new();
        for kv in &cli.global.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = cli.global.seed {
            overrides.push(("seed".to_string(), seed.to_string()));
        }
        let settings = Settings::load(cli.global.config.as_deref(), overrides)?;
        let seed = settings.get("seed", 0u64)?;
        Ok(Self {
            settings,
            seed,
            json: cli.global.json,
        })
    }

    /// Prints the summary (JSON with `--json`) and writes the manifest.
    fn finish<T: Serialize>(&self, rec: Recorder, human: &str, summary: &T) -> Result<()> {
        let value = serde_json::to_value(summary)?;
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value)?);
        } else {
            println!("{human}");
        }
        rec.finish(self.settings.snapshot(), value)?;
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::Synth { out, gazetteer } => data::synth(&ctx, out, gazetteer.as_deref()),
        Command::Preprocess { input, output } => data::preprocess(&ctx, input, output),
        Command::Label { kind, input, output } => data::label(&ctx, *kind, input, output),
        Command::Split {
            kind,
            input,
            out,
            setting,
            run,
            write_dir,
        } => data::split(&ctx, *kind, input, out, setting.as_deref(), run.as_deref(), write_dir.as_deref()),
        Command::Train {
            arch,
            train,
            dev,
            aux,
            aux_data,
            task,
            init,
            out,
        } => model::train(
            &ctx,
            &model::TrainArgs {
                arch: *arch,
                train,
                dev: dev.as_deref(),
                aux,
                aux_data: aux_data.as_deref(),
                tasks: task,
                init: init.as_deref(),
                out,
            },
        ),
        Command::PretrainMlm { input, out } => model::pretrain(&ctx, input, out),
        Command::Distill {
            teacher,
            student,
            pool,
            out,
        } => model::distill(&ctx, teacher, *student, pool, out),
        Command::Predict { ckpt, input, out } => eval::predict(&ctx, ckpt, input, out),
        Command::Selftrain {
            ckpt,
            pool,
            mode,
            pct,
            level,
            gazetteer,
            train,
            exclude,
            augmented,
            out,
        } => model::selftrain(
            &ctx,
            &model::SelftrainArgs {
                ckpt,
                pool,
                mode: *mode,
                pct: *pct,
                level: parse_level(level)?,
                gazetteer: gazetteer.as_deref(),
                train: train.as_deref(),
                exclude,
                augmented: augmented.as_deref(),
                out,
            },
        ),
        Command::Regime {
            regime,
            auto,
            gold,
            dev,
            arch,
            task,
            out,
        } => model::regime(&ctx, *regime, auto, gold.as_deref(), dev.as_deref(), *arch, task, out),
        Command::MsaFilter {
            classifier,
            input,
            output,
            level,
        } => model::msa_filter(&ctx, classifier, input, output, parse_level(level)?),
        Command::Eval {
            ckpt,
            input,
            predictions,
            level,
            project,
            user_level,
            tau,
            geo,
            confusion,
            out,
        } => eval::eval(
            &ctx,
            &eval::EvalArgs {
                ckpt: ckpt.as_deref(),
                input: input.as_deref(),
                predictions: predictions.as_deref(),
                level: parse_level(level)?,
                project: *project,
                user_level: *user_level,
                tau: *tau,
                geo: geo.as_deref(),
                confusion: confusion.as_deref(),
                out: out.as_deref(),
            },
        ),
        Command::Kappa { a, b } => eval::kappa(&ctx, a, b),
        Command::AttnDump { ckpt, input, out } => eval::attn_dump(&ctx, ckpt, input, out),
    }
}

pub fn parse_level(s: &str) -> Result<Level> {
    s.parse::<Level>().map_err(|e| UsageError(e.to_string()).into())
}

pub fn parse_tasks(names: &[String]) -> Result<Vec<Task>> {
    names
        .iter()
        .map(|n| n.parse::<Task>().map_err(|e| UsageError(e).into()))
        .collect()
}

fn load_records(rec: &mut Recorder, path: &Path) -> Result<Vec<TweetRecord>> {
    rec.input(path);
    read_records(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(rec: &mut Recorder, path: &Path) -> Result<Model> {
    rec.input(path);
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.to_model()?)
}

fn write_text(rec: &mut Recorder, path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    rec.output(path);
    Ok(())
}

fn ids_of(records: &[TweetRecord]) -> BTreeSet<String> {
    records.iter().map(|r| r.id.clone()).collect()
}

fn bigru_from(s: &Settings, base: BiGruConfig) -> Result<BiGruConfig> {
    Ok(BiGruConfig {
        embed_dim: s.get("embed_dim", base.embed_dim)?,
        layers: s.get("layers", base.layers)?,
        units: s.get("units", base.units)?,
        max_seq_len: s.get("max_seq_len", base.max_seq_len)?,
        batch_size: s.get("batch_size", base.batch_size)?,
        dropout: s.get("dropout", base.dropout)?,
        lr: s.get("lr", base.lr)?,
        epochs: s.get("epochs", base.epochs)?,
        patience: s.get("patience", base.patience)?,
    })
}

/// Structural encoder keys use the `enc.` prefix; fine-tuning keys are the
/// shared ones (`lr`, `batch_size`, ...), pretraining keys use `mlm.`.
fn encoder_from(s: &Settings, base: EncoderConfig) -> Result<EncoderConfig> {
    Ok(EncoderConfig {
        layers: s.get("enc.layers", base.layers)?,
        heads: s.get("enc.heads", base.heads)?,
        model_dim: s.get("enc.model_dim", base.model_dim)?,
        ff_dim: s.get("enc.ff_dim", base.ff_dim)?,
        max_seq_len: s.get("enc.max_seq_len", base.max_seq_len)?,
        finetune_max_seq_len: s.get("max_seq_len", base.finetune_max_seq_len)?,
        mask_rate: s.get("mlm.mask_rate", base.mask_rate)?,
        mask_token_prob: s.get("mlm.mask_token_prob", base.mask_token_prob)?,
        random_token_prob: s.get("mlm.random_token_prob", base.random_token_prob)?,
        pretrain_batch_size: s.get("mlm.batch_size", base.pretrain_batch_size)?,
        pretrain_lr: s.get("mlm.lr", base.pretrain_lr)?,
        finetune_batch_size: s.get("batch_size", base.finetune_batch_size)?,
        finetune_lr: s.get("lr", base.finetune_lr)?,
        dropout: s.get("dropout", base.dropout)?,
        epochs: s.get("epochs", base.epochs)?,
        patience: s.get("patience", base.patience)?,
    })
}

fn ha_order(arch: ArchName) -> Option<HaOrder> {
    match arch {
        ArchName::HamtlCity => Some(HaOrder::CityFirst),
        ArchName::HamtlCountry => Some(HaOrder::CountryFirst),
        _ => None,
    }
}

fn build_arch(s: &Settings, arch: ArchName) -> Result<Architecture> {
    Ok(match arch {
        ArchName::Single => Architecture::SingleTask(bigru_from(s, BiGruConfig::default())?),
        ArchName::MtlCommon | ArchName::MtlSpec => Architecture::Mtl {
            config: bigru_from(s, BiGruConfig::default())?,
            attention: if arch == ArchName::MtlCommon {
                MtlAttention::Common
            } else {
                MtlAttention::TaskSpecific
            },
        },
        ArchName::HamtlCity | ArchName::HamtlCountry => {
            let order = ha_order(arch).expect("ha-mtl");
            let base = HaMtlConfig::new(order).base;
            Architecture::HaMtl(HaMtlConfig {
                base: bigru_from(s, base)?,
                order,
            })
        }
        ArchName::Encoder => Architecture::Encoder(encoder_from(s, EncoderConfig::default())?),
    })
}

/// Main tasks: all three levels for multi-task recurrent models, otherwise
/// the requested tasks (city by default; single-task takes exactly one).
fn main_tasks(arch: ArchName, requested: &[String]) -> Result<Vec<Task>> {
    let requested = parse_tasks(requested)?;
    if requested.iter().any(|t| !t.is_main()) {
        bail!(UsageError("--task takes city, state or country".into()));
    }
    Ok(match arch {
        ArchName::MtlCommon | ArchName::MtlSpec | ArchName::HamtlCity | ArchName::HamtlCountry => {
            if !requested.is_empty() && requested != Task::GEO {
                bail!(UsageError(format!("{arch:?} always trains city, state and country")));
            }
            Task::GEO.to_vec()
        }
        ArchName::Single if requested.len() > 1 => {
            bail!(UsageError("single-task models take one --task".into()))
        }
        _ if requested.is_empty() => vec![Task::City],
        _ => requested,
    })
}
