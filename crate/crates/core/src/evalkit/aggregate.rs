use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

pub const DEFAULT_TAU: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetPrediction {
    pub label: String,
    pub confidence: f64,
}

impl TweetPrediction {
    pub fn new(label: impl Into<String>, confidence: f64) -> Self {
        Self {
            label: label.into(),
            confidence,
        }
    }
}

/// Majority vote over tweets with confidence ≥ `tau`. Ties go to the
/// larger summed confidence, then the lexicographically smaller label. If no
/// tweet clears `tau`, every tweet votes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub tau: f64,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl AggregationSpec {
    pub fn aggregate(&self, preds: &[TweetPrediction]) -> Option<String> {
        let confident: Vec<&TweetPrediction> = preds.iter().filter(|p| p.confidence >= self.tau).collect();
        let voters = if confident.is_empty() {
            preds.iter().collect()
        } else {
            confident
        };
        let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for p in voters {
            let e = tally.entry(&p.label).or_default();
            e.0 += 1;
            e.1 += p.confidence;
        }
        // BTreeMap iterates labels in ascending order, so keeping the first
        // maximum implements the lexicographic tie-break.
        let mut best: Option<(&str, usize, f64)> = None;
        for (label, (count, sum)) in tally {
            let better = match best {
                None => true,
                Some((_, bc, bs)) => count > bc || (count == bc && sum > bs),
            };
            if better {
                best = Some((label, count, sum));
            }
        }
        best.map(|(l, _, _)| l.to_string())
    }
}

pub fn user_level_aggregate(
    by_user: &BTreeMap<String, Vec<TweetPrediction>>,
    spec: &AggregationSpec,
) -> Result<BTreeMap<String, String>> {
    if !(0.0..=1.0).contains(&spec.tau) {
        return Err(EvalError::InvalidTau(spec.tau));
    }
    by_user
        .iter()
        .map(|(user, preds)| {
            spec.aggregate(preds)
                .map(|l| (user.clone(), l))
                .ok_or_else(|| EvalError::EmptyUser(user.clone()))
        })
        .collect()
}

/// Most frequent training label; ties go to the lexicographically smaller.
pub fn majority_baseline<S: AsRef<str>>(train_labels: &[S]) -> Result<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in train_labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l.to_string()).ok_or(EvalError::Empty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(l: &str, c: f64) -> TweetPrediction {
        TweetPrediction::new(l, c)
    }

    #[test]
    fn thresholded_majority() {
        let spec = AggregationSpec::default();
        assert_eq!(spec.aggregate(&[p("A", 0.9), p("A", 0.4), p("B", 0.2)]).unwrap(), "A");
        // One confident B outweighs two unconfident A votes.
        assert_eq!(spec.aggregate(&[p("A", 0.3), p("A", 0.3), p("B", 0.5)]).unwrap(), "B");
    }

    #[test]
    fn fallback_when_nothing_clears_tau() {
        let spec = AggregationSpec::default();
        assert_eq!(spec.aggregate(&[p("B", 0.1), p("A", 0.2), p("B", 0.3)]).unwrap(), "B");
    }

    #[test]
    fn tie_rules() {
        let spec = AggregationSpec::default();
        assert_eq!(spec.aggregate(&[p("B", 0.5), p("A", 0.9)]).unwrap(), "A");
        assert_eq!(spec.aggregate(&[p("A", 0.5), p("B", 0.9)]).unwrap(), "B");
        assert_eq!(spec.aggregate(&[p("B", 0.5), p("A", 0.5)]).unwrap(), "A");
    }

    #[test]
    fn tau_boundary_is_inclusive() {
        let spec = AggregationSpec::default();
        assert_eq!(spec.aggregate(&[p("A", 0.35), p("B", 0.34), p("B", 0.1)]).unwrap(), "A");
    }

    #[test]
    fn per_user_map_and_errors() {
        let mut users = BTreeMap::new();
        users.insert("u1".to_string(), vec![p("A", 0.9)]);
        users.insert("u2".to_string(), vec![p("B", 0.9), p("B", 0.1)]);
        let out = user_level_aggregate(&users, &AggregationSpec::default()).unwrap();
        assert_eq!(out["u1"], "A");
        assert_eq!(out["u2"], "B");
        users.insert("u3".to_string(), vec![]);
        assert_eq!(
            user_level_aggregate(&users, &AggregationSpec::default()).unwrap_err(),
            EvalError::EmptyUser("u3".into())
        );
        assert!(user_level_aggregate(&users, &AggregationSpec { tau: 1.5 }).is_err());
    }

    #[test]
    fn majority_baseline_rules() {
        assert_eq!(majority_baseline(&["B", "A", "A", "A"]).unwrap(), "A");
        assert_eq!(majority_baseline(&["B", "B", "A", "A"]).unwrap(), "A");
        assert_eq!(majority_baseline(&["B", "C", "C"]).unwrap(), "C");
        let empty: [&str; 0] = [];
        assert!(majority_baseline(&empty).is_err());
    }
}
