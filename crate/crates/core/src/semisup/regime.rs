use std::fmt;
use std::str::FromStr;

use nncore::{ParamStore, RngStream};
use serde::{Deserialize, Serialize};

use crate::corpus::{passes_arabic_filter, Level, TweetRecord};
use crate::models::{finetune, make_samples, Model, Task, TrainConfig, TrainReport};

use super::{Result, SemisupError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Auto-tagged data only.
    Weak,
    /// Seeded shuffle of auto-tagged and gold data together.
    WeakPlusGold,
    /// Auto-tagged first, then resume on gold.
    WeakThenGold,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Weak => "weak",
            Regime::WeakPlusGold => "weak+gold",
            Regime::WeakThenGold => "weak-then-gold",
        }
    }

    pub fn needs_gold(self) -> bool {
        self != Regime::Weak
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "weak" => Ok(Regime::Weak),
            "weak+gold" | "weak_plus_gold" => Ok(Regime::WeakPlusGold),
            "weak-then-gold" | "weak_then_gold" => Ok(Regime::WeakThenGold),
            _ => Err(format!("unknown regime `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub seed: u64,
    /// Epoch budget of each phase; only weak-then-gold uses the second one.
    pub phase_epochs: [usize; 2],
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Granularity of the code-switching head, if the model has one.
    pub codesw_level: Level,
}

impl RegimeSpec {
    pub fn new(regime: Regime, seed: u64) -> Self {
        Self {
            regime,
            seed,
            phase_epochs: [15, 15],
            patience: 5,
            batch_size: 8,
            lr: 1e-3,
            codesw_level: Level::Country,
        }
    }

    /// Phase names in training order.
    pub fn phases(&self) -> &'static [&'static str] {
        match self.regime {
            Regime::Weak => &["weak"],
            Regime::WeakPlusGold => &["weak+gold"],
            Regime::WeakThenGold => &["weak", "gold"],
        }
    }

    fn train_config(&self, phase: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.phase_epochs[phase],
            patience: self.patience,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed.wrapping_add(phase as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLog {
    pub name: String,
    /// Ids in the order they were handed to the trainer.
    pub training_ids: Vec<String>,
    pub initial_params: ParamStore,
    pub final_params: ParamStore,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct RegimeOutcome {
    pub model: Model,
    pub phases: Vec<PhaseLog>,
    /// Auto-tagged records dropped by the Arabic-word filter.
    pub auto_filtered: usize,
}

fn canonical_key(r: &TweetRecord) -> (&str, &str, &str, Option<&crate::corpus::LocationHierarchy>) {
    (&r.id, &r.user_id, &r.text, r.labels.as_ref())
}

/// Trains under a noisy-label regime. `builder` receives every record that
/// will be trained on so it can size the vocabulary and heads. Every head of
/// the built model except masked-LM is trained where a label exists; `dev`
/// drives early stopping in each phase independently.
pub fn run_regime<F>(spec: &RegimeSpec, auto: &[TweetRecord], gold: &[TweetRecord], dev: &[TweetRecord], builder: F) -> Result<RegimeOutcome>
where
    F: FnOnce(&[TweetRecord]) -> std::result::Result<Model, crate::models::ModelError>,
{
    if spec.regime.needs_gold() && gold.is_empty() {
        return Err(SemisupError::EmptyGold);
    }
    let kept: Vec<TweetRecord> = auto.iter().filter(|r| passes_arabic_filter(r)).cloned().collect();
    let auto_filtered = auto.len() - kept.len();
    if kept.is_empty() {
        return Err(SemisupError::EmptyAuto);
    }
    let union: Vec<TweetRecord> = match spec.regime {
        Regime::Weak => kept.clone(),
        _ => kept.iter().chain(gold).cloned().collect(),
    };
    let mut model = builder(&union)?;
    let tasks: Vec<Task> = model.spec.heads.iter().map(|h| h.task).filter(|&t| t != Task::Mlm).collect();
    let dev_samples = make_samples(&model, dev, &tasks, spec.codesw_level)?;

    let phase_sets: Vec<Vec<TweetRecord>> = match spec.regime {
        Regime::Weak => vec![kept],
        Regime::WeakPlusGold => {
            let mut all = union;
            all.sort_by(|a, b| canonical_key(a).cmp(&canonical_key(b)));
            RngStream::new(spec.seed).split("weak+gold").shuffle(&mut all);
            vec![all]
        }
        Regime::WeakThenGold => vec![kept, gold.to_vec()],
    };

    let mut phases = Vec::with_capacity(phase_sets.len());
    for (i, (records, name)) in phase_sets.iter().zip(spec.phases()).enumerate() {
        let samples = make_samples(&model, records, &tasks, spec.codesw_level)?;
        let initial_params = model.store.clone();
        let report = finetune(&mut model, &samples, &dev_samples, &spec.train_config(i))?;
        log::info!("phase {name}: {} samples, {} epochs", samples.len(), report.epochs_run);
        phases.push(PhaseLog {
            name: name.to_string(),
            training_ids: samples.into_iter().map(|s| s.id).collect(),
            initial_params,
            final_params: model.store.clone(),
            report,
        });
    }
    Ok(RegimeOutcome {
        model,
        phases,
        auto_filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_names_round_trip() {
        for r in [Regime::Weak, Regime::WeakPlusGold, Regime::WeakThenGold] {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert_eq!(RegimeSpec::new(Regime::WeakThenGold, 0).phases().len(), 2);
    }

    #[test]
    fn gold_required() {
        let spec = RegimeSpec::new(Regime::WeakPlusGold, 0);
        let auto = vec![TweetRecord::new("a", "u", "ا ب ت")];
        let err = run_regime(&spec, &auto, &[], &[], |_| unreachable!()).unwrap_err();
        assert!(matches!(err, SemisupError::EmptyGold));
        let spec = RegimeSpec::new(Regime::Weak, 0);
        let short = vec![TweetRecord::new("a", "u", "hello")];
        assert!(matches!(run_regime(&spec, &short, &[], &[], |_| unreachable!()), Err(SemisupError::EmptyAuto)));
    }
}
