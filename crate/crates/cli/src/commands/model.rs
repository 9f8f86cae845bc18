use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Result};
use mdi::corpus::{read_records, write_jsonl, write_records, Gazetteer, Hierarchy, Level, TweetRecord};
use mdi::models::{
    distill as run_distill, finetune, heads_from, make_samples, mtl_finetune, pretrain_mlm, Architecture, Checkpoint,
    DistillConfig, HaMtlConfig, MlmConfig, Model, ModelSpec, TaskHead, TaskSet, Task, TrainConfig, TrainingMeta, Vocab,
};
use mdi::semisup::{
    build_pool, msa_filter as run_msa_filter, pseudo_labels, augment_train, run_regime, self_train_select, threshold_select,
    PoolFilter, PseudoSource, Regime, RegimeSpec, SelectMode,
};
use serde::Serialize;

use super::{bigru_from, build_arch, encoder_from, ha_order, ids_of, load_model, load_records, main_tasks, parse_level, parse_tasks, Ctx};
use crate::manifest::Recorder;
use crate::{ArchName, ModeName, RegimeName, StudentName, UsageError};

fn save_checkpoint(rec: &mut Recorder, path: &Path, model: &Model, meta: TrainingMeta) -> Result<()> {
    Checkpoint::from_model(model, meta).save(path)?;
    rec.output(path);
    Ok(())
}

fn codesw_level(ctx: &Ctx) -> Result<Level> {
    parse_level(&ctx.settings.get("codesw_level", "country".to_string())?)
}

fn build_vocab(ctx: &Ctx, records: &[&TweetRecord]) -> Result<Vocab> {
    let min_freq = ctx.settings.get("vocab_min_freq", 1usize)?;
    Ok(Vocab::build(records.iter().map(|r| r.text.as_str()), min_freq))
}

pub struct TrainArgs<'a> {
    pub arch: ArchName,
    pub train: &'a Path,
    pub dev: Option<&'a Path>,
    pub aux: &'a [String],
    pub aux_data: Option<&'a Path>,
    pub tasks: &'a [String],
    pub init: Option<&'a Path>,
    pub out: &'a Path,
}

#[derive(Serialize)]
struct TrainSummary {
    arch: String,
    tasks: Vec<String>,
    train_samples: usize,
    epochs_run: usize,
    best_epoch: usize,
    dev_metric: Option<f64>,
    params: usize,
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let mut rec = Recorder::new("train");
    let train = load_records(&mut rec, a.train)?;
    let dev = match a.dev {
        Some(p) => load_records(&mut rec, p)?,
        None => Vec::new(),
    };
    let aux_records = match a.aux_data {
        Some(p) => load_records(&mut rec, p)?,
        None => train.clone(),
    };
    let main = main_tasks(a.arch, a.tasks)?;
    let aux = parse_tasks(a.aux)?;
    if aux.iter().any(|t| !matches!(t, Task::Diagloss | Task::Codesw)) {
        bail!(UsageError("--aux takes diagloss and/or codesw".into()));
    }
    let level = codesw_level(ctx)?;
    let all_tasks: Vec<Task> = main.iter().chain(&aux).copied().collect();

    let labelled: Vec<TweetRecord> = train.iter().chain(&dev).cloned().collect();
    let mut heads = heads_from(&labelled, &main, level);
    heads.extend(heads_from(&aux_records, &aux, level));

    let mut arch = build_arch(&ctx.settings, a.arch)?;
    let init = match a.init {
        Some(p) => {
            let init = load_model(&mut rec, p)?;
            let Architecture::Encoder(base) = &init.spec.arch else {
                bail!(UsageError("--init expects an encoder checkpoint".into()));
            };
            if a.arch != ArchName::Encoder {
                bail!(UsageError("--init only applies to --arch encoder".into()));
            }
            arch = Architecture::Encoder(encoder_from(&ctx.settings, base.clone())?);
            Some(init)
        }
        None => None,
    };
    let vocab = match &init {
        Some(m) => m.spec.vocab.clone(),
        None => build_vocab(ctx, &train.iter().chain(&aux_records).collect::<Vec<_>>())?,
    };
    let cfg = TrainConfig::for_arch(&arch, ctx.seed);
    let mut model = Model::build(ModelSpec::new(arch, heads, vocab), ctx.seed)?;
    if let Some(init) = &init {
        let copied = model.load_body_from(init)?;
        log::info!("initialized {copied} tensors from the pretrained encoder");
    }

    let main_samples = make_samples(&model, &train, &main, level)?;
    let dev_samples = make_samples(&model, &dev, &main, level)?;
    let report = if aux.is_empty() {
        finetune(&mut model, &main_samples, &dev_samples, &cfg)?
    } else {
        let main_set = TaskSet::new("main", main_samples.clone());
        let aux_sets = aux
            .iter()
            .map(|&t| Ok(TaskSet::new(t.as_str(), make_samples(&model, &aux_records, &[t], level)?)))
            .collect::<Result<Vec<_>>>()?;
        mtl_finetune(&mut model, &main_set, &aux_sets, &dev_samples, &cfg)?
    };

    let task_names: Vec<String> = all_tasks.iter().map(|t| t.to_string()).collect();
    let notes = BTreeMap::from([
        ("arch".to_string(), model.spec.arch.name().to_string()),
        ("tasks".to_string(), task_names.join(",")),
    ]);
    let meta = TrainingMeta {
        seed: ctx.seed,
        best_epoch: report.best_epoch,
        dev_metric: report.dev_metric,
        config: ctx.settings.snapshot(),
        notes,
    };
    save_checkpoint(&mut rec, a.out, &model, meta)?;
    let summary = TrainSummary {
        arch: model.spec.arch.name().to_string(),
        tasks: task_names,
        train_samples: main_samples.len(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        dev_metric: report.dev_metric,
        params: model.num_params(),
    };
    let human = format!(
        "trained {} for {} epochs (best {}), dev {}",
        summary.arch,
        summary.epochs_run,
        summary.best_epoch,
        summary.dev_metric.map_or("n/a".to_string(), |m| format!("{m:.4}"))
    );
    ctx.finish(rec, &human, &summary)
}

#[derive(Serialize)]
struct PretrainSummary {
    vocab: usize,
    chunks: usize,
    initial_eval_loss: f64,
    final_eval_loss: f64,
    masked_fraction: f64,
    epoch_losses: Vec<f64>,
}

pub fn pretrain(ctx: &Ctx, input: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("pretrain-mlm");
    let records = load_records(&mut rec, input)?;
    let cfg = encoder_from(&ctx.settings, Default::default())?;
    let epochs = ctx.settings.get("mlm.epochs", 20usize)?;
    let vocab = build_vocab(ctx, &records.iter().collect::<Vec<_>>())?;
    let mlm = MlmConfig::from_encoder(&cfg, epochs, ctx.seed);
    let seqs: Vec<Vec<usize>> = records.iter().map(|r| vocab.encode(&r.text, mlm.max_seq_len)).collect();
    let spec = ModelSpec::new(Architecture::Encoder(cfg), vec![TaskHead::mlm()], vocab);
    let mut model = Model::build(spec, ctx.seed)?;
    let report = pretrain_mlm(&mut model, &seqs, &mlm)?;
    let notes = BTreeMap::from([
        ("arch".to_string(), "encoder".to_string()),
        ("mlm.final_eval_loss".to_string(), report.final_eval_loss.to_string()),
    ]);
    let meta = TrainingMeta {
        seed: ctx.seed,
        best_epoch: epochs,
        dev_metric: None,
        config: ctx.settings.snapshot(),
        notes,
    };
    save_checkpoint(&mut rec, out, &model, meta)?;
    let summary = PretrainSummary {
        vocab: model.spec.vocab.len(),
        chunks: report.chunks,
        initial_eval_loss: report.initial_eval_loss,
        final_eval_loss: report.final_eval_loss,
        masked_fraction: report.masked_fraction(),
        epoch_losses: report.epoch_losses.clone(),
    };
    let human = format!(
        "masked cross-entropy {:.4} -> {:.4}, masked fraction {:.4}",
        summary.initial_eval_loss, summary.final_eval_loss, summary.masked_fraction
    );
    ctx.finish(rec, &human, &summary)
}

#[derive(Serialize)]
struct DistillSummary {
    initial_mse: f64,
    final_mse: f64,
    agreement: f64,
    teacher_params: usize,
    student_params: usize,
    param_ratio: f64,
}

pub fn distill(ctx: &Ctx, teacher: &Path, student: StudentName, pool: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("distill");
    let teacher = load_model(&mut rec, teacher)?;
    let pool = load_records(&mut rec, pool)?;
    let order = match student {
        StudentName::HamtlCity => ha_order(ArchName::HamtlCity),
        StudentName::HamtlCountry => ha_order(ArchName::HamtlCountry),
    }
    .expect("ha-mtl order");
    let base = bigru_from(&ctx.settings, HaMtlConfig::new(order).base)?;
    let heads: Vec<TaskHead> = teacher.spec.heads.iter().filter(|h| h.task != Task::Mlm).cloned().collect();
    let vocab = build_vocab(ctx, &pool.iter().collect::<Vec<_>>())?;
    let spec = ModelSpec::new(Architecture::HaMtl(HaMtlConfig { base, order }), heads, vocab);
    let mut model = Model::build(spec, ctx.seed)?;
    let d = DistillConfig::default();
    let cfg = DistillConfig {
        epochs: ctx.settings.get("distill.epochs", d.epochs)?,
        batch_size: ctx.settings.get("distill.batch_size", d.batch_size)?,
        lr: ctx.settings.get("distill.lr", d.lr)?,
        seed: ctx.seed,
    };
    let texts: Vec<&str> = pool.iter().map(|r| r.text.as_str()).collect();
    let report = run_distill(&teacher, &mut model, &texts, &cfg)?;
    let notes = BTreeMap::from([
        ("arch".to_string(), model.spec.arch.name().to_string()),
        ("distill.param_ratio".to_string(), report.param_ratio().to_string()),
    ]);
    let meta = TrainingMeta {
        seed: ctx.seed,
        best_epoch: report.train.best_epoch,
        dev_metric: None,
        config: ctx.settings.snapshot(),
        notes,
    };
    save_checkpoint(&mut rec, out, &model, meta)?;
    let summary = DistillSummary {
        initial_mse: report.initial_mse,
        final_mse: report.final_mse,
        agreement: report.agreement,
        teacher_params: report.teacher_params,
        student_params: report.student_params,
        param_ratio: report.param_ratio(),
    };
    let human = format!(
        "logit mse {:.4} -> {:.4}, agreement {:.3}, teacher/student params {:.2}",
        summary.initial_mse, summary.final_mse, summary.agreement, summary.param_ratio
    );
    ctx.finish(rec, &human, &summary)
}

pub struct SelftrainArgs<'a> {
    pub ckpt: &'a Path,
    pub pool: &'a Path,
    pub mode: ModeName,
    pub pct: u32,
    pub level: Level,
    pub gazetteer: Option<&'a Path>,
    pub train: Option<&'a Path>,
    pub exclude: &'a [std::path::PathBuf],
    pub augmented: Option<&'a Path>,
    pub out: &'a Path,
}

#[derive(Serialize)]
struct SelftrainSummary {
    pool: usize,
    filtered_out: usize,
    selected: usize,
    augmented: Option<usize>,
}

pub fn selftrain(ctx: &Ctx, a: &SelftrainArgs) -> Result<()> {
    let mut rec = Recorder::new("selftrain");
    let model = load_model(&mut rec, a.ckpt)?;
    let records = load_records(&mut rec, a.pool)?;
    let filter = PoolFilter {
        min_words: ctx.settings.get_opt("pool.min_words")?,
        replies_only: ctx.settings.get("pool.replies_only", false)?,
        no_diacritics: ctx.settings.get("pool.no_diacritics", false)?,
    };
    let kept: Vec<TweetRecord> = records.iter().filter(|r| filter.keep(r)).cloned().collect();
    let task = match a.level {
        Level::City => Task::City,
        Level::State => Task::State,
        Level::Country => Task::Country,
    };
    let pool = build_pool(&model, &kept, task)?;
    let selected = match ctx.settings.get_opt::<f64>("selftrain.threshold")? {
        Some(tau) => threshold_select(&pool, tau)?,
        None => {
            let mode = match a.mode {
                ModeName::Agnostic => SelectMode::Agnostic,
                ModeName::Specific => SelectMode::Specific,
            };
            self_train_select(&pool, mode, a.pct)?
        }
    };

    let train = match a.train {
        Some(p) => load_records(&mut rec, p)?,
        None => Vec::new(),
    };
    let hierarchy = match a.gazetteer {
        Some(p) => {
            rec.input(p);
            Gazetteer::load(p)?.hierarchy()?
        }
        None => Hierarchy::from_triples(train.iter().filter_map(|r| r.labels.clone()))?,
    };
    let labels = pseudo_labels(&selected, a.level, &hierarchy, PseudoSource::SelfTrain);
    write_jsonl(a.out, &labels)?;
    rec.output(a.out);

    let augmented = match a.augmented {
        None => None,
        Some(path) => {
            if a.train.is_none() {
                bail!(UsageError("--augmented needs --train".into()));
            }
            if a.level != Level::City {
                bail!(UsageError("augmentation needs city-level pseudo-labels".into()));
            }
            let by_id: BTreeMap<&str, &TweetRecord> = kept.iter().map(|r| (r.id.as_str(), r)).collect();
            let mut pseudo = Vec::new();
            for e in &selected {
                let Ok(triple) = hierarchy.triple(&e.predicted) else {
                    bail!("no hierarchy entry for predicted city `{}`", e.predicted);
                };
                pseudo.push(by_id[e.id.as_str()].clone().with_labels(triple));
            }
            let mut exclude = BTreeSet::new();
            for p in a.exclude {
                rec.input(p);
                exclude.extend(ids_of(&read_records(p)?));
            }
            let out = augment_train(&train, &pseudo, &exclude);
            write_records(path, &out)?;
            rec.output(path);
            Some(out.len())
        }
    };
    let summary = SelftrainSummary {
        pool: records.len(),
        filtered_out: records.len() - kept.len(),
        selected: selected.len(),
        augmented,
    };
    ctx.finish(rec, &format!("selected {} of {} pool records", summary.selected, kept.len()), &summary)
}

#[derive(Serialize)]
struct PhaseSummary {
    name: String,
    samples: usize,
    epochs_run: usize,
    best_epoch: usize,
    dev_metric: Option<f64>,
}

#[derive(Serialize)]
struct RegimeSummary {
    regime: String,
    auto_filtered: usize,
    phases: Vec<PhaseSummary>,
}

#[allow(clippy::too_many_arguments)]
pub fn regime(
    ctx: &Ctx,
    regime: RegimeName,
    auto: &Path,
    gold: Option<&Path>,
    dev: Option<&Path>,
    arch: ArchName,
    tasks: &[String],
    out: &Path,
) -> Result<()> {
    let mut rec = Recorder::new("regime");
    let auto = load_records(&mut rec, auto)?;
    let gold = match gold {
        Some(p) => load_records(&mut rec, p)?,
        None => Vec::new(),
    };
    let dev = match dev {
        Some(p) => load_records(&mut rec, p)?,
        None => Vec::new(),
    };
    let regime = match regime {
        RegimeName::Weak => Regime::Weak,
        RegimeName::WeakPlusGold => Regime::WeakPlusGold,
        RegimeName::WeakThenGold => Regime::WeakThenGold,
    };
    if regime == Regime::Weak && !gold.is_empty() {
        bail!(UsageError("the weak regime takes no --gold".into()));
    }
    let main = main_tasks(arch, tasks)?;
    let architecture = build_arch(&ctx.settings, arch)?;
    let defaults = RegimeSpec::new(regime, ctx.seed);
    let train_cfg = TrainConfig::for_arch(&architecture, ctx.seed);
    let spec = RegimeSpec {
        phase_epochs: [
            ctx.settings.get("regime.phase1_epochs", defaults.phase_epochs[0])?,
            ctx.settings.get("regime.phase2_epochs", defaults.phase_epochs[1])?,
        ],
        patience: train_cfg.patience,
        batch_size: train_cfg.batch_size,
        lr: train_cfg.lr,
        codesw_level: codesw_level(ctx)?,
        ..defaults
    };
    let vocab_min_freq = ctx.settings.get("vocab_min_freq", 1usize)?;
    let seed = ctx.seed;
    let dev_for_heads = dev.clone();
    let outcome = run_regime(&spec, &auto, &gold, &dev, move |union| {
        let labelled: Vec<TweetRecord> = union.iter().chain(&dev_for_heads).cloned().collect();
        let heads = heads_from(&labelled, &main, spec.codesw_level);
        let vocab = Vocab::build(union.iter().map(|r| r.text.as_str()), vocab_min_freq);
        Model::build(ModelSpec::new(architecture, heads, vocab), seed)
    })?;

    let mut notes = BTreeMap::from([
        ("arch".to_string(), outcome.model.spec.arch.name().to_string()),
        ("regime".to_string(), regime.to_string()),
        ("regime.auto_filtered".to_string(), outcome.auto_filtered.to_string()),
    ]);
    let mut phases = Vec::new();
    for (i, p) in outcome.phases.iter().enumerate() {
        notes.insert(
            format!("regime.phase{}", i + 1),
            format!("{}: {} samples, {} epochs, best {}", p.name, p.training_ids.len(), p.report.epochs_run, p.report.best_epoch),
        );
        phases.push(PhaseSummary {
            name: p.name.clone(),
            samples: p.training_ids.len(),
            epochs_run: p.report.epochs_run,
            best_epoch: p.report.best_epoch,
            dev_metric: p.report.dev_metric,
        });
    }
    let last = outcome.phases.last().expect("at least one phase");
    let meta = TrainingMeta {
        seed: ctx.seed,
        best_epoch: last.report.best_epoch,
        dev_metric: last.report.dev_metric,
        config: ctx.settings.snapshot(),
        notes,
    };
    save_checkpoint(&mut rec, out, &outcome.model, meta)?;
    let summary = RegimeSummary {
        regime: regime.to_string(),
        auto_filtered: outcome.auto_filtered,
        phases,
    };
    let human = summary
        .phases
        .iter()
        .map(|p| format!("{}: {} samples, {} epochs", p.name, p.samples, p.epochs_run))
        .collect::<Vec<_>>()
        .join("; ");
    ctx.finish(rec, &human, &summary)
}

pub fn msa_filter(ctx: &Ctx, classifier: &Path, input: &Path, output: &Path, level: Level) -> Result<()> {
    let mut rec = Recorder::new("msa-filter");
    let model = load_model(&mut rec, classifier)?;
    let records = load_records(&mut rec, input)?;
    let (kept, report) = run_msa_filter(&records, &model, level)?;
    write_records(output, &kept)?;
    rec.output(output);
    let human = format!("retained {}, removed {}", report.retained, report.removed);
    ctx.finish(rec, &human, &report)
}
