//! Classification, agreement and geolocation metrics.

mod aggregate;
mod geo;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{majority_baseline, user_level_aggregate, AggregationSpec, TweetPrediction, DEFAULT_TAU};
pub use geo::{geo_metrics, haversine_km, GeoReport, EARTH_RADIUS_KM};

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} gold vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("chance agreement is 1 but observed agreement is {0}")]
    DegenerateChance(f64),
    #[error("coordinate ({0}, {1}) out of range")]
    OutOfRange(f64, f64),
    #[error("no coordinates for city `{0}`")]
    MissingCoordinates(String),
    #[error("user `{0}` has no predictions")]
    EmptyUser(String),
    #[error("tau {0} outside [0, 1]")]
    InvalidTau(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[gold][pred]`, indexed like `labels`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(&csv_field(l));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    pub confusion: ConfusionMatrix,
}

/// Accuracy and macro-F1 over the full `label_set`; classes that never
/// occur in gold or predictions score F1 = 0.
pub fn classification_metrics<S: AsRef<str>>(gold: &[S], pred: &[S], label_set: &[S]) -> Result<ClassificationReport> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() || label_set.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut labels: Vec<String> = label_set.iter().map(|s| s.as_ref().to_string()).collect();
    labels.sort();
    labels.dedup();
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let lookup = |l: &S| {
        index
            .get(l.as_ref())
            .copied()
            .ok_or_else(|| EvalError::UnknownLabel(l.as_ref().to_string()))
    };
    let k = labels.len();
    let mut counts = vec![vec![0usize; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        counts[lookup(g)?][lookup(p)?] += 1;
    }
    let correct: usize = (0..k).map(|i| counts[i][i]).sum();
    let mut per_class_f1 = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let tp = counts[i][i] as f64;
        let gold_i: usize = counts[i].iter().sum();
        let pred_i: usize = counts.iter().map(|row| row[i]).sum();
        let denom = (gold_i + pred_i) as f64;
        per_class_f1.insert(label.clone(), if denom == 0.0 { 0.0 } else { 2.0 * tp / denom });
    }
    let macro_f1 = per_class_f1.values().sum::<f64>() / k as f64;
    Ok(ClassificationReport {
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1,
        per_class_f1,
        confusion: ConfusionMatrix { labels, counts },
    })
}

/// Cohen's kappa with marginal-product chance agreement.
pub fn cohen_kappa<S: AsRef<str> + Ord>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let mut ma: BTreeMap<&str, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&str, f64> = BTreeMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x.as_ref()).or_default() += 1.0;
        *mb.entry(y.as_ref()).or_default() += 1.0;
        if x.as_ref() == y.as_ref() {
            agree += 1.0;
        }
    }
    let p_o = agree / n;
    let p_e: f64 = ma.iter().map(|(k, ca)| ca * mb.get(k).copied().unwrap_or(0.0)).sum::<f64>() / (n * n);
    if p_e >= 1.0 {
        return if p_o >= 1.0 { Ok(1.0) } else { Err(EvalError::DegenerateChance(p_o)) };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Metrics bundle written by every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub acc_at_80_5: Option<f64>,
    pub acc_at_161: Option<f64>,
    pub mean_km: Option<f64>,
    pub median_km: Option<f64>,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn new(task: impl Into<String>, cls: &ClassificationReport, n: usize, seed: u64) -> Self {
        Self {
            task: task.into(),
            accuracy: cls.accuracy,
            macro_f1: cls.macro_f1,
            acc_at_80_5: None,
            acc_at_161: None,
            mean_km: None,
            median_km: None,
            n,
            seed,
            config: BTreeMap::new(),
        }
    }

    pub fn with_geo(mut self, geo: &GeoReport) -> Self {
        self.acc_at_80_5 = Some(geo.acc_at_80_5);
        self.acc_at_161 = Some(geo.acc_at_161);
        self.mean_km = Some(geo.mean_km);
        self.median_km = Some(geo.median_km);
        self
    }

    /// JSON with a fixed field order, so equal reports are equal bytes.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let g = ["A", "B", "C", "A"];
        let r = classification_metrics(&g, &g, &["A", "B", "C"]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.confusion.total(), 4);
    }

    #[test]
    fn hand_computed_macro_f1() {
        let r = classification_metrics(&["A", "A", "B"], &["A", "B", "B"], &["A", "B"]).unwrap();
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class_f1["A"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class_f1["B"] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_drag_macro_f1_down() {
        let r = classification_metrics(&["A", "A"], &["A", "A"], &["A", "B", "C", "D"]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.macro_f1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let gold: Vec<String> = (0..21).map(|i| format!("c{i:02}")).collect();
        let pred = vec!["c00".to_string(); 21];
        let r = classification_metrics(&gold, &pred, &gold).unwrap();
        assert!((r.accuracy - 1.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn classification_errors() {
        assert_eq!(
            classification_metrics(&["A"], &["A", "B"], &["A", "B"]).unwrap_err(),
            EvalError::LengthMismatch(1, 2)
        );
        assert_eq!(
            classification_metrics(&["A"], &["Z"], &["A"]).unwrap_err(),
            EvalError::UnknownLabel("Z".into())
        );
        let empty: [&str; 0] = [];
        assert_eq!(classification_metrics(&empty, &empty, &["A"]).unwrap_err(), EvalError::Empty);
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(cohen_kappa(&["x", "y", "x"], &["x", "y", "x"]).unwrap(), 1.0);
        assert!(cohen_kappa(&["x", "x", "y", "y"], &["x", "y", "x", "y"]).unwrap().abs() < 1e-15);
        assert_eq!(cohen_kappa(&["x", "x"], &["x", "x"]).unwrap(), 1.0);
        assert!(cohen_kappa(&["x"], &["x", "y"]).is_err());
    }

    #[test]
    fn kappa_is_label_permutation_invariant() {
        let a = ["p", "q", "r", "p", "q", "q", "r", "p"];
        let b = ["p", "r", "r", "q", "q", "p", "r", "p"];
        let relabel = |s: &&str| match *s {
            "p" => "zz",
            "q" => "aa",
            _ => "mm",
        };
        let a2: Vec<&str> = a.iter().map(relabel).collect();
        let b2: Vec<&str> = b.iter().map(relabel).collect();
        assert!((cohen_kappa(&a, &b).unwrap() - cohen_kappa(&a2, &b2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn confusion_csv() {
        let r = classification_metrics(&["A", "B"], &["B", "B"], &["A", "B"]).unwrap();
        assert_eq!(r.confusion.to_csv(), "gold\\pred,A,B\nA,0,1\nB,0,1\n");
    }

    #[test]
    fn report_json_keys() {
        let cls = classification_metrics(&["A"], &["A"], &["A"]).unwrap();
        let json = MetricsReport::new("city", &cls, 1, 9).to_canonical_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for k in ["task", "accuracy", "macro_f1", "acc_at_80_5", "acc_at_161", "mean_km", "median_km", "n", "seed"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
