//! Self-training selection, noisy-label training regimes and MSA filtering.

mod regime;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{count_diacritics, CorpusError, Hierarchy, Level, TweetRecord};
use crate::models::{predict, Model, ModelError, Task};

pub use regime::{run_regime, PhaseLog, Regime, RegimeOutcome, RegimeSpec};

pub type Result<T> = std::result::Result<T, SemisupError>;

#[derive(Debug, Error)]
pub enum SemisupError {
    #[error("prediction pool is empty")]
    EmptyPool,
    #[error("percentage {0} is not one of 5, 10, 25")]
    InvalidPct(u32),
    #[error("invalid pool entry: {0}")]
    InvalidPool(String),
    #[error("regime needs gold data but the gold set is empty")]
    EmptyGold,
    #[error("auto-tagged set is empty after filtering")]
    EmptyAuto,
    #[error("classifier must have a diagloss head over {{DA, MSA}}")]
    NotBinaryClassifier,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub const ALLOWED_PCTS: [u32; 3] = [5, 10, 25];

/// One prediction on an unlabelled record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub predicted: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<f64>>,
}

impl PoolEntry {
    pub fn new(id: impl Into<String>, predicted: impl Into<String>, confidence: f64) -> Self {
        Self {
            id: id.into(),
            predicted: predicted.into(),
            confidence,
            distribution: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(SemisupError::InvalidPool(format!("{}: confidence {}", self.id, self.confidence)));
        }
        if let Some(d) = &self.distribution {
            let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if (max - self.confidence).abs() > 1e-12 {
                return Err(SemisupError::InvalidPool(format!(
                    "{}: confidence is not the distribution maximum",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Top records overall, irrespective of predicted class.
    Agnostic,
    /// Top records within each predicted class.
    Specific,
}

/// Confidence descending, then id ascending.
fn rank(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

fn quota(n: usize, pct: u32) -> usize {
    n * pct as usize / 100
}

/// Top-percentage selection. Agnostic mode keeps the ⌊pct·N/100⌋ most
/// confident records; specific mode keeps ⌊pct·n_c/100⌋ per predicted class
/// (classes are emitted in label order).
pub fn self_train_select(pool: &[PoolEntry], mode: SelectMode, pct: u32) -> Result<Vec<PoolEntry>> {
    if !ALLOWED_PCTS.contains(&pct) {
        return Err(SemisupError::InvalidPct(pct));
    }
    if pool.is_empty() {
        return Err(SemisupError::EmptyPool);
    }
    pool.iter().try_for_each(PoolEntry::validate)?;
    Ok(match mode {
        SelectMode::Agnostic => {
            let mut sorted = pool.to_vec();
            sorted.sort_by(rank);
            sorted.truncate(quota(pool.len(), pct));
            sorted
        }
        SelectMode::Specific => {
            let mut by_class: BTreeMap<&str, Vec<PoolEntry>> = BTreeMap::new();
            for e in pool {
                by_class.entry(&e.predicted).or_default().push(e.clone());
            }
            by_class
                .into_values()
                .flat_map(|mut v| {
                    let q = quota(v.len(), pct);
                    v.sort_by(rank);
                    v.truncate(q);
                    v
                })
                .collect()
        }
    })
}

/// Records whose confidence is at least `tau`, ranked like
/// [`self_train_select`].
pub fn threshold_select(pool: &[PoolEntry], tau: f64) -> Result<Vec<PoolEntry>> {
    if pool.is_empty() {
        return Err(SemisupError::EmptyPool);
    }
    pool.iter().try_for_each(PoolEntry::validate)?;
    let mut kept: Vec<PoolEntry> = pool.iter().filter(|e| e.confidence >= tau).cloned().collect();
    kept.sort_by(rank);
    Ok(kept)
}

/// Optional hygiene filters for the unlabelled pool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolFilter {
    pub min_words: Option<usize>,
    pub replies_only: bool,
    pub no_diacritics: bool,
}

impl PoolFilter {
    pub fn keep(&self, r: &TweetRecord) -> bool {
        self.min_words.is_none_or(|n| r.text.split_whitespace().count() > n)
            && (!self.replies_only || r.is_reply)
            && (!self.no_diacritics || count_diacritics(&r.text) == 0)
    }
}

/// Predicts `task` on `records` and builds the prediction pool.
pub fn build_pool(model: &Model, records: &[TweetRecord], task: Task) -> Result<Vec<PoolEntry>> {
    let h = model
        .spec
        .head_index(task)
        .ok_or_else(|| ModelError::InvalidConfig(format!("model has no `{task}` head")))?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let preds = predict(model, &texts)?;
    Ok(records
        .iter()
        .zip(preds)
        .map(|(r, p)| {
            let out = p.head(task).expect("labelled head");
            let (i, conf) = out.top();
            PoolEntry {
                id: r.id.clone(),
                predicted: model.spec.heads[h].labels[i].clone(),
                confidence: conf,
                distribution: Some(out.probabilities.clone()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoSource {
    #[serde(rename = "self-train")]
    SelfTrain,
    #[serde(rename = "auto-tag")]
    AutoTag,
}

/// Row of a pseudo-label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_country: Option<String>,
    pub confidence: f64,
    pub source: PseudoSource,
}

/// Pseudo-labels for predictions made at `level`; coarser levels are filled
/// through the hierarchy when it knows the predicted label.
pub fn pseudo_labels(selected: &[PoolEntry], level: Level, hierarchy: &Hierarchy, source: PseudoSource) -> Vec<PseudoLabel> {
    selected
        .iter()
        .map(|e| {
            let mut p = PseudoLabel {
                id: e.id.clone(),
                pseudo_city: None,
                pseudo_state: None,
                pseudo_country: None,
                confidence: e.confidence,
                source,
            };
            match level {
                Level::City => {
                    p.pseudo_state = hierarchy.project(&e.predicted, Level::State).ok();
                    p.pseudo_country = hierarchy.project(&e.predicted, Level::Country).ok();
                    p.pseudo_city = Some(e.predicted.clone());
                }
                Level::State => {
                    p.pseudo_country = hierarchy.state_to_country(&e.predicted).map(str::to_string);
                    p.pseudo_state = Some(e.predicted.clone());
                }
                Level::Country => p.pseudo_country = Some(e.predicted.clone()),
            }
            p
        })
        .collect()
}

/// Gold TRAIN plus pseudo-labelled records, minus any record whose id is in
/// `exclude` (DEV and TEST ids) or already in TRAIN.
pub fn augment_train(train: &[TweetRecord], pseudo: &[TweetRecord], exclude: &BTreeSet<String>) -> Vec<TweetRecord> {
    let mut seen: BTreeSet<&str> = train.iter().map(|r| r.id.as_str()).collect();
    let mut out = train.to_vec();
    for r in pseudo {
        if !exclude.contains(&r.id) && seen.insert(&r.id) {
            out.push(r.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsaFilterReport {
    /// Class → (retained, removed).
    pub per_class: BTreeMap<String, (usize, usize)>,
    pub retained: usize,
    pub removed: usize,
}

/// Keeps records the MSA/DA classifier predicts as DA.
pub fn msa_filter(records: &[TweetRecord], classifier: &Model, level: Level) -> Result<(Vec<TweetRecord>, MsaFilterReport)> {
    let h = classifier
        .spec
        .head_index(Task::Diagloss)
        .ok_or(SemisupError::NotBinaryClassifier)?;
    let labels = &classifier.spec.heads[h].labels;
    if labels != &["DA".to_string(), "MSA".to_string()] {
        return Err(SemisupError::NotBinaryClassifier);
    }
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let preds = predict(classifier, &texts)?;
    let mut kept = Vec::new();
    let mut report = MsaFilterReport::default();
    for (r, p) in records.iter().zip(preds) {
        let is_da = labels[p.head(Task::Diagloss).expect("diagloss head").top().0] == "DA";
        let class = r.label(level).unwrap_or("").to_string();
        let entry = report.per_class.entry(class).or_default();
        if is_da {
            entry.0 += 1;
            report.retained += 1;
            kept.push(r.clone());
        } else {
            entry.1 += 1;
            report.removed += 1;
        }
    }
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(spec: &[(&str, &str, f64)]) -> Vec<PoolEntry> {
        spec.iter().map(|&(id, c, p)| PoolEntry::new(id, c, p)).collect()
    }

    #[test]
    fn specific_quotas() {
        let mut entries = Vec::new();
        for i in 0..8 {
            entries.push(PoolEntry::new(format!("a{i}"), "A", 0.1 * i as f64));
        }
        for i in 0..4 {
            entries.push(PoolEntry::new(format!("b{i}"), "B", 0.2 * i as f64));
        }
        let sel = self_train_select(&entries, SelectMode::Specific, 25).unwrap();
        let ids: Vec<&str> = sel.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["a7", "a6", "b3"]);
    }

    #[test]
    fn agnostic_top_three() {
        let p = pool(&[
            ("x1", "A", 0.2),
            ("x2", "B", 0.9),
            ("x3", "A", 0.5),
            ("x4", "B", 0.5),
            ("x5", "A", 0.1),
            ("x6", "B", 0.3),
            ("x7", "A", 0.3),
            ("x8", "B", 0.4),
            ("x9", "A", 0.0),
            ("y1", "B", 0.05),
            ("y2", "A", 0.15),
            ("y3", "B", 0.25),
        ]);
        let sel = self_train_select(&p, SelectMode::Agnostic, 25).unwrap();
        let ids: Vec<&str> = sel.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["x2", "x3", "x4"]);
    }

    #[test]
    fn rejects_bad_input() {
        let p = pool(&[("a", "A", 0.5)]);
        assert!(matches!(self_train_select(&p, SelectMode::Agnostic, 100), Err(SemisupError::InvalidPct(100))));
        assert!(matches!(self_train_select(&[], SelectMode::Agnostic, 5), Err(SemisupError::EmptyPool)));
        let mut bad = p.clone();
        bad[0].distribution = Some(vec![0.3, 0.7]);
        assert!(matches!(self_train_select(&bad, SelectMode::Agnostic, 5), Err(SemisupError::InvalidPool(_))));
        // Quota floors to zero.
        assert!(self_train_select(&p, SelectMode::Specific, 25).unwrap().is_empty());
    }

    #[test]
    fn threshold_variant() {
        let p = pool(&[("a", "A", 0.4), ("b", "A", 0.9), ("c", "B", 0.3)]);
        let ids: Vec<String> = threshold_select(&p, 0.4).unwrap().into_iter().map(|e| e.id).collect();
        assert_eq!(ids, vec!["b", "a"]);
    }

    #[test]
    fn pseudo_label_rows() {
        let h = Hierarchy::from_triples([crate::corpus::LocationHierarchy::new("c", "s", "k")]).unwrap();
        let rows = pseudo_labels(&pool(&[("1", "c", 0.8)]), Level::City, &h, PseudoSource::SelfTrain);
        let json = serde_json::to_string(&rows[0]).unwrap();
        assert_eq!(
            json,
            r#"{"id":"1","pseudo_city":"c","pseudo_state":"s","pseudo_country":"k","confidence":0.8,"source":"self-train"}"#
        );
    }

    #[test]
    fn augmentation_excludes_held_out_ids() {
        let train = vec![TweetRecord::new("t1", "u", "x")];
        let pseudo = vec![
            TweetRecord::new("p1", "u", "x"),
            TweetRecord::new("d1", "u", "x"),
            TweetRecord::new("t1", "u", "y"),
        ];
        let exclude: BTreeSet<String> = ["d1".to_string()].into();
        let ids: Vec<String> = augment_train(&train, &pseudo, &exclude).into_iter().map(|r| r.id).collect();
        assert_eq!(ids, vec!["t1", "p1"]);
    }

    #[test]
    fn pool_filter() {
        let mut r = TweetRecord::new("1", "u", "a b c");
        let f = PoolFilter {
            min_words: Some(2),
            replies_only: true,
            no_diacritics: true,
        };
        assert!(!f.keep(&r));
        r.is_reply = true;
        assert!(f.keep(&r));
        assert!(PoolFilter::default().keep(&TweetRecord::new("2", "u", "")));
    }
}
