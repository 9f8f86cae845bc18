use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use nncore::{Adam, AdamConfig, Graph, NodeId, ParamStore, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use super::config::Architecture;
use super::net::Model;
use super::predict::run_inference;
use super::{ModelError, Result, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Gold class index.
    Class(usize),
    /// Regression target for the head's raw logits.
    Logits(Vec<f64>),
}

/// One training example: token ids plus targets keyed by head index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<usize>,
    pub targets: Vec<(usize, Target)>,
}

/// Examples of one task (dataset) in multi-task training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl TaskSet {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self {
            name: name.into(),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Budget and optimizer settings from the architecture's config.
    pub fn for_arch(arch: &Architecture, seed: u64) -> Self {
        match arch {
            Architecture::Encoder(c) => Self {
                epochs: c.epochs,
                patience: c.patience,
                batch_size: c.finetune_batch_size,
                lr: c.finetune_lr,
                seed,
            },
            other => {
                let c = other.bigru().expect("recurrent");
                Self {
                    epochs: c.epochs,
                    patience: c.patience,
                    batch_size: c.batch_size,
                    lr: c.lr,
                    seed,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Keeps the epoch with the highest dev metric; an epoch only counts as an
/// improvement if it is strictly better, so ties favour the earlier epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            epoch: 0,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        self.epoch += 1;
        if self.best.is_none_or(|(_, b)| metric > b) {
            self.best = Some((self.epoch, metric));
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NoImprovement
        }
    }

    /// 1-based best epoch and its metric.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub dev_metric: Option<f64>,
    pub dev_history: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub steps: usize,
}

/// Proportional round-robin order over datasets with `batches[i]` batches
/// each: batch k of dataset i is placed at (k+1)/n_i, ties by dataset order.
pub fn interleave_schedule(batches: &[usize]) -> Vec<usize> {
    let mut slots: Vec<(usize, usize)> = batches
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..n).map(move |k| (i, k)))
        .collect();
    slots.sort_by(|&(i, k), &(j, l)| {
        let lhs = (k as u128 + 1) * batches[j] as u128;
        let rhs = (l as u128 + 1) * batches[i] as u128;
        lhs.cmp(&rhs).then(i.cmp(&j)).then(k.cmp(&l))
    });
    slots.into_iter().map(|(i, _)| i).collect()
}

/// Shuffles, buckets by exact length, cuts batches, then shuffles the
/// batch order.
pub(crate) fn make_batches(samples: &[Sample], batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        buckets.entry(samples[i].tokens.len()).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = buckets
        .into_values()
        .flat_map(|b| b.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    rng.shuffle(&mut batches);
    batches
}

fn check_targets(model: &Model, set: &[Sample]) -> Result<()> {
    for s in set {
        if s.tokens.is_empty() {
            return Err(ModelError::InvalidConfig(format!("sample `{}` has no tokens", s.id)));
        }
        for (h, t) in &s.targets {
            let head = model
                .spec
                .heads
                .get(*h)
                .ok_or_else(|| ModelError::InvalidConfig(format!("sample `{}` targets missing head {h}", s.id)))?;
            let dim = head.labels.len();
            match t {
                Target::Class(c) if *c >= dim => {
                    return Err(ModelError::LabelOutOfRange {
                        head: head.task.to_string(),
                        label: *c,
                    })
                }
                Target::Logits(v) if v.len() != dim => {
                    return Err(ModelError::LabelSetMismatch(format!(
                        "sample `{}`: {} logits for head `{}` with {dim} labels",
                        s.id,
                        v.len(),
                        head.task
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Summed per-head loss for one batch: mean cross-entropy for class
/// targets, mean squared error for logit targets.
pub(crate) fn batch_loss(
    model: &Model,
    g: &mut Graph,
    samples: &[&Sample],
    rng: &mut RngStream,
) -> Result<Option<NodeId>> {
    let heads: BTreeSet<usize> = samples.iter().flat_map(|s| s.targets.iter().map(|(h, _)| *h)).collect();
    let heads: Vec<usize> = heads.into_iter().collect();
    if heads.is_empty() {
        return Ok(None);
    }
    let batch: Vec<Vec<usize>> = samples.iter().map(|s| s.tokens.clone()).collect();
    let out = model.forward(g, &batch, &heads, rng)?;
    let mut parts = Vec::new();
    for &h in &heads {
        let logits = out.logits[h].expect("requested");
        let targets: Vec<Option<&Target>> = samples
            .iter()
            .map(|s| s.targets.iter().find(|(i, _)| *i == h).map(|(_, t)| t))
            .collect();
        if targets.iter().any(|t| matches!(t, Some(Target::Logits(_)))) {
            let rows: Option<Vec<Vec<f64>>> = targets
                .iter()
                .map(|t| match t {
                    Some(Target::Logits(v)) => Some(v.clone()),
                    _ => None,
                })
                .collect();
            let rows = rows.ok_or_else(|| {
                ModelError::InvalidConfig("a batch mixes logit and class targets for one head".into())
            })?;
            parts.push(g.mse(logits, &Tensor::from_rows(&rows)?)?);
        } else {
            let classes: Vec<Option<usize>> = targets
                .iter()
                .map(|t| match t {
                    Some(Target::Class(c)) => Some(*c),
                    _ => None,
                })
                .collect();
            let n = classes.iter().flatten().count();
            let ce = g.cross_entropy(logits, &classes)?;
            parts.push(g.affine(ce, 1.0 / n as f64, 0.0));
        }
    }
    Ok(Some(if parts.len() == 1 { parts[0] } else { g.add_scalars(&parts)? }))
}

/// Heads used for model selection: main tasks present in `dev`, or every
/// class-target head if there is no main task.
fn selection_heads(model: &Model, dev: &[Sample]) -> Vec<usize> {
    let present: BTreeSet<usize> = dev
        .iter()
        .flat_map(|s| s.targets.iter())
        .filter(|(_, t)| matches!(t, Target::Class(_)))
        .map(|(h, _)| *h)
        .collect();
    let main: Vec<usize> = present
        .iter()
        .copied()
        .filter(|&h| model.spec.heads[h].task.is_main())
        .collect();
    if main.is_empty() {
        present.into_iter().collect()
    } else {
        main
    }
}

/// Mean accuracy over the selection heads.
pub fn dev_accuracy(model: &Model, dev: &[Sample]) -> Result<f64> {
    let heads = selection_heads(model, dev);
    if heads.is_empty() {
        return Ok(0.0);
    }
    let seqs: Vec<Vec<usize>> = dev.iter().map(|s| s.tokens.clone()).collect();
    let inf = run_inference(model, &seqs, &heads, 64, false)?;
    let mut total = 0.0;
    for (k, &h) in heads.iter().enumerate() {
        let mut correct = 0usize;
        let mut n = 0usize;
        for (s, logits) in dev.iter().zip(&inf.logits[k]) {
            if let Some((_, Target::Class(c))) = s.targets.iter().find(|(i, _)| *i == h) {
                n += 1;
                if argmax(logits) == *c {
                    correct += 1;
                }
            }
        }
        total += correct as f64 / n.max(1) as f64;
    }
    Ok(total / heads.len() as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Trains on `main` interleaved with `aux` datasets. Each step draws one
/// batch from one dataset; only the heads that dataset targets get loss.
/// With a non-empty `dev`, the best-dev weights are restored at the end;
/// otherwise the final weights are kept.
pub fn mtl_finetune(
    model: &mut Model,
    main: &TaskSet,
    aux: &[TaskSet],
    dev: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if main.samples.is_empty() {
        return Err(ModelError::NoMainTask);
    }
    if model.spec.heads.iter().any(|h| h.task == Task::Mlm) && model.spec.heads.len() == 1 {
        return Err(ModelError::InvalidConfig("use pretrain_mlm for the masked-LM head".into()));
    }
    let sets: Vec<&TaskSet> = std::iter::once(main).chain(aux.iter().filter(|s| !s.samples.is_empty())).collect();
    for s in &sets {
        check_targets(model, &s.samples)?;
    }
    check_targets(model, dev)?;

    let root = RngStream::new(cfg.seed).split("train");
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_store: Option<ParamStore> = None;
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        let erng = root.split_index("epoch", epoch as u64);
        let batches: Vec<Vec<Vec<usize>>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| make_batches(&s.samples, cfg.batch_size, &mut erng.split_index("batches", i as u64)))
            .collect();
        let counts: Vec<usize> = batches.iter().map(Vec::len).collect();
        let mut cursor = vec![0usize; sets.len()];
        let mut loss_sum = 0.0;
        let schedule = interleave_schedule(&counts);
        for (step, &set) in schedule.iter().enumerate() {
            let batch = &batches[set][cursor[set]];
            cursor[set] += 1;
            let samples: Vec<&Sample> = batch.iter().map(|&i| &sets[set].samples[i]).collect();
            let mut drng = erng.split_index("dropout", step as u64);
            let grads = {
                let mut g = Graph::new(&model.store, true);
                let Some(loss) = batch_loss(model, &mut g, &samples, &mut drng)? else {
                    continue;
                };
                loss_sum += g.value(loss).item();
                g.backward(loss)?
            };
            adam.step(&mut model.store, &grads)?;
            report.steps += 1;
        }
        report.train_loss.push(loss_sum / schedule.len().max(1) as f64);
        report.epochs_run = epoch;
        if dev.is_empty() {
            continue;
        }
        let metric = dev_accuracy(model, dev)?;
        report.dev_history.push(metric);
        log::info!("epoch {epoch}: loss {:.4} dev {metric:.4}", report.train_loss[epoch - 1]);
        match stopper.observe(metric) {
            StopDecision::Improved => best_store = Some(model.store.clone()),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }
    match (stopper.best(), best_store) {
        (Some((epoch, metric)), Some(store)) => {
            model.store = store;
            report.best_epoch = epoch;
            report.dev_metric = Some(metric);
        }
        _ => report.best_epoch = report.epochs_run,
    }
    Ok(report)
}

/// Single-dataset training; the same as [`mtl_finetune`] without auxiliary
/// datasets.
pub fn finetune(model: &mut Model, train: &[Sample], dev: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    mtl_finetune(model, &TaskSet::new("main", train.to_vec()), &[], dev, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_proportional() {
        assert_eq!(interleave_schedule(&[2, 1]), vec![0, 0, 1]);
        assert_eq!(interleave_schedule(&[4, 2]), vec![0, 0, 1, 0, 0, 1]);
        assert_eq!(interleave_schedule(&[3]), vec![0, 0, 0]);
        assert_eq!(interleave_schedule(&[1, 1, 1]), vec![0, 1, 2]);
        let s = interleave_schedule(&[5, 3, 0]);
        assert_eq!(s.iter().filter(|&&i| i == 0).count(), 5);
        assert_eq!(s.iter().filter(|&&i| i == 1).count(), 3);
    }

    #[test]
    fn early_stopping_example() {
        let mut es = EarlyStopping::new(5);
        let history = [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6];
        let mut stopped_after = None;
        for (i, &m) in history.iter().enumerate() {
            if es.observe(m) == StopDecision::Stop {
                stopped_after = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_after, Some(7));
        assert_eq!(es.best(), Some((2, 0.6)));
    }

    #[test]
    fn patience_beyond_epochs_never_stops() {
        let mut es = EarlyStopping::new(10);
        assert!((0..10).all(|_| es.observe(0.1) != StopDecision::Stop));
    }

    #[test]
    fn argmax_prefers_first_max() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn batches_are_length_homogeneous_and_cover_all() {
        let samples: Vec<Sample> = (0..23)
            .map(|i| Sample {
                id: i.to_string(),
                tokens: vec![3; 1 + i % 3],
                targets: vec![],
            })
            .collect();
        let batches = make_batches(&samples, 4, &mut RngStream::new(1));
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() <= 4);
            assert!(b.iter().all(|&i| samples[i].tokens.len() == samples[b[0]].tokens.len()));
        }
    }
}
