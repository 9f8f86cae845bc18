use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mdi::corpus::{read_jsonl, write_jsonl, Gazetteer, Hierarchy, Level};
use mdi::evalkit::{
    classification_metrics, cohen_kappa, geo_metrics, majority_baseline, user_level_aggregate, AggregationSpec,
    MetricsReport, TweetPrediction, DEFAULT_TAU,
};
use mdi::models::{model_tokens, predict as run_predict, Model, Task};
use serde::{Deserialize, Serialize};

use super::{load_model, load_records, write_text, Ctx};
use crate::manifest::Recorder;
use crate::UsageError;

#[derive(Serialize)]
struct HeadRow {
    label: String,
    confidence: f64,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct PredictionRow {
    id: String,
    user_id: String,
    heads: BTreeMap<String, HeadRow>,
}

pub fn predict(ctx: &Ctx, ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("predict");
    let model = load_model(&mut rec, ckpt)?;
    let records = load_records(&mut rec, input)?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let preds = run_predict(&model, &texts)?;
    let rows: Vec<PredictionRow> = records
        .iter()
        .zip(&preds)
        .map(|(r, p)| PredictionRow {
            id: r.id.clone(),
            user_id: r.user_id.clone(),
            heads: p
                .heads
                .iter()
                .map(|h| {
                    let (i, confidence) = h.top();
                    let labels = &model.spec.heads[model.spec.head_index(h.task).expect("head")].labels;
                    let row = HeadRow {
                        label: labels[i].clone(),
                        confidence,
                        probabilities: h.probabilities.clone(),
                    };
                    (h.task.to_string(), row)
                })
                .collect(),
        })
        .collect();
    write_jsonl(out, &rows)?;
    rec.output(out);
    let summary = BTreeMap::from([("records", rows.len())]);
    ctx.finish(rec, &format!("predicted {} records", rows.len()), &summary)
}

/// One scored item: a tweet-level prediction against its gold label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub user_id: String,
    pub gold: String,
    pub pred: String,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

pub struct EvalArgs<'a> {
    pub ckpt: Option<&'a Path>,
    pub input: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub level: Level,
    pub project: bool,
    pub user_level: bool,
    pub tau: Option<f64>,
    pub geo: Option<&'a Path>,
    pub confusion: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

fn level_task(level: Level) -> Task {
    match level {
        Level::City => Task::City,
        Level::State => Task::State,
        Level::Country => Task::Country,
    }
}

/// Rows from a model run; with `project`, city predictions are mapped to
/// `level` through `hierarchy`.
fn model_rows(model: &Model, records: &[mdi::corpus::TweetRecord], a: &EvalArgs, hierarchy: &Hierarchy) -> Result<(Vec<EvalRow>, Vec<String>)> {
    let task = if a.project { Task::City } else { level_task(a.level) };
    let h = model
        .spec
        .head_index(task)
        .ok_or_else(|| UsageError(format!("checkpoint has no `{task}` head")))?;
    let labels = &model.spec.heads[h].labels;
    let labelled: Vec<_> = records.iter().filter(|r| r.labels.is_some()).collect();
    if labelled.is_empty() {
        bail!("no labelled records to evaluate");
    }
    let texts: Vec<&str> = labelled.iter().map(|r| r.text.as_str()).collect();
    let preds = run_predict(model, &texts)?;
    let mut rows = Vec::with_capacity(labelled.len());
    for (r, p) in labelled.iter().zip(preds) {
        let (i, confidence) = p.head(task).expect("head").top();
        let pred = if a.project {
            hierarchy.project(&labels[i], a.level)?
        } else {
            labels[i].clone()
        };
        rows.push(EvalRow {
            id: r.id.clone(),
            user_id: r.user_id.clone(),
            gold: r.label(a.level).expect("labelled").to_string(),
            pred,
            confidence,
        });
    }
    let head_labels = if a.project {
        labels.iter().map(|c| hierarchy.project(c, a.level)).collect::<mdi::corpus::Result<Vec<_>>>()?
    } else {
        labels.clone()
    };
    Ok((rows, head_labels))
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let mut rec = Recorder::new("eval");
    if a.tau.is_some() && !a.user_level {
        bail!(UsageError("--tau only applies with --user-level".into()));
    }
    if a.geo.is_some() && a.level != Level::City {
        bail!(UsageError("distance metrics need --level city".into()));
    }
    let gazetteer = match a.geo {
        Some(p) => {
            rec.input(p);
            Some(Gazetteer::load(p)?)
        }
        None => None,
    };
    let (mut rows, head_labels) = match (a.predictions, a.ckpt, a.input) {
        (Some(p), None, None) => {
            rec.input(p);
            let mut rows: Vec<EvalRow> = read_jsonl(p)?;
            if a.project {
                let Some(g) = &gazetteer else {
                    bail!(UsageError("--project with --predictions needs --geo".into()));
                };
                let h = g.hierarchy()?;
                for r in &mut rows {
                    r.gold = h.project(&r.gold, a.level)?;
                    r.pred = h.project(&r.pred, a.level)?;
                }
            }
            (rows, Vec::new())
        }
        (None, Some(ckpt), Some(input)) => {
            let model = load_model(&mut rec, ckpt)?;
            let records = load_records(&mut rec, input)?;
            let hierarchy = match &gazetteer {
                Some(g) => g.hierarchy()?,
                None => Hierarchy::from_triples(records.iter().filter_map(|r| r.labels.clone()))?,
            };
            model_rows(&model, &records, a, &hierarchy)?
        }
        _ => bail!(UsageError("eval takes either --predictions or --ckpt with --input".into())),
    };
    rows.sort_by(|x, y| x.id.cmp(&y.id));

    let tau = a.tau.unwrap_or(DEFAULT_TAU);
    let (gold, pred): (Vec<String>, Vec<String>) = if a.user_level {
        let mut by_user: BTreeMap<String, Vec<TweetPrediction>> = BTreeMap::new();
        let mut user_gold: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &rows {
            by_user
                .entry(r.user_id.clone())
                .or_default()
                .push(TweetPrediction::new(&r.pred, r.confidence));
            user_gold.entry(r.user_id.clone()).or_default().push(r.gold.clone());
        }
        let voted = user_level_aggregate(&by_user, &AggregationSpec { tau })?;
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for (user, labels) in &user_gold {
            gold.push(majority_baseline(labels)?);
            pred.push(voted[user].clone());
        }
        (gold, pred)
    } else {
        rows.iter().map(|r| (r.gold.clone(), r.pred.clone())).unzip()
    };

    let mut label_set: Vec<String> = head_labels;
    label_set.extend(gold.iter().cloned());
    label_set.extend(pred.iter().cloned());
    label_set.sort();
    label_set.dedup();
    let cls = classification_metrics(&gold, &pred, &label_set)?;
    let mut report = MetricsReport::new(a.level.as_str(), &cls, gold.len(), ctx.seed);
    if let Some(g) = &gazetteer {
        report = report.with_geo(&geo_metrics(&pred, &gold, g)?);
    }
    report.config = ctx.settings.snapshot();
    report.config.insert("eval.level".into(), a.level.to_string());
    report.config.insert("eval.project".into(), a.project.to_string());
    report.config.insert("eval.user_level".into(), a.user_level.to_string());
    if a.user_level {
        report.config.insert("eval.tau".into(), tau.to_string());
    }
    let json = report.to_canonical_json();
    if let Some(out) = a.out {
        write_text(&mut rec, out, &json)?;
    }
    if let Some(path) = a.confusion {
        write_text(&mut rec, path, &cls.confusion.to_csv())?;
    }
    let human = match a.out {
        Some(_) => format!("accuracy {:.4}, macro-F1 {:.4} over {}", report.accuracy, report.macro_f1, report.n),
        None => json,
    };
    ctx.finish(rec, &human, &report)
}

fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

pub fn kappa(ctx: &Ctx, a: &Path, b: &Path) -> Result<()> {
    let mut rec = Recorder::new("kappa");
    rec.input(a);
    rec.input(b);
    let k = cohen_kappa(&read_labels(a)?, &read_labels(b)?)?;
    ctx.finish(rec, &format!("{k}"), &BTreeMap::from([("kappa", k)]))
}

#[derive(Serialize)]
struct AttentionRow {
    id: String,
    tokens: Vec<String>,
    attention: BTreeMap<String, Vec<f64>>,
}

/// Tokens as written, aligned with the encoded ids (`[UNK]` for empty text).
fn surface_tokens(model: &Model, text: &str) -> Vec<String> {
    let mut t: Vec<String> = model_tokens(text).into_iter().take(model.max_seq_len()).collect();
    if t.is_empty() {
        t.push("[UNK]".to_string());
    }
    t
}

pub fn attn_dump(ctx: &Ctx, ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let mut rec = Recorder::new("attn-dump");
    let model = load_model(&mut rec, ckpt)?;
    let records = load_records(&mut rec, input)?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let preds = run_predict(&model, &texts)?;
    let rows: Vec<AttentionRow> = records
        .iter()
        .zip(preds)
        .map(|(r, p)| AttentionRow {
            id: r.id.clone(),
            tokens: surface_tokens(&model, &r.text),
            attention: p.attention.into_iter().map(|(site, w)| (site, w.as_slice().to_vec())).collect(),
        })
        .collect();
    write_jsonl(out, &rows)?;
    rec.output(out);
    let summary = BTreeMap::from([("records", rows.len()), ("sites", model.attention_sites().len())]);
    ctx.finish(rec, &format!("wrote attention for {} records", rows.len()), &summary)
}
