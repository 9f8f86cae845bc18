use serde::{Deserialize, Serialize};

use super::{ModelError, Result, Task, TaskHead, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiGruConfig {
    pub embed_dim: usize,
    pub layers: usize,
    /// Total units per layer, split evenly between the two directions.
    pub units: usize,
    pub max_seq_len: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for BiGruConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            layers: 3,
            units: 1000,
            max_seq_len: 50,
            batch_size: 8,
            dropout: 0.5,
            lr: 1e-3,
            epochs: 15,
            patience: 5,
        }
    }
}

impl BiGruConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.units == 0 || !self.units.is_multiple_of(2) {
            return bad("units must be even and positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.embed_dim == 0 || self.layers == 0 || self.max_seq_len == 0 || self.batch_size == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaOrder {
    CityFirst,
    CountryFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaMtlConfig {
    pub base: BiGruConfig,
    pub order: HaOrder,
}

impl HaMtlConfig {
    pub fn new(order: HaOrder) -> Self {
        Self {
            base: BiGruConfig {
                layers: 4,
                dropout: 0.7,
                ..BiGruConfig::default()
            },
            order,
        }
    }

    /// Supervised task at each attention layer (1-based layer, task).
    pub fn supervision(&self) -> [(usize, Task); 3] {
        match self.order {
            HaOrder::CityFirst => [(2, Task::City), (3, Task::State), (4, Task::Country)],
            HaOrder::CountryFirst => [(2, Task::Country), (3, Task::State), (4, Task::City)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Longest packed pretraining sequence (excluding `[CLS]`).
    pub max_seq_len: usize,
    pub finetune_max_seq_len: usize,
    pub mask_rate: f64,
    pub mask_token_prob: f64,
    pub random_token_prob: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub finetune_batch_size: usize,
    pub finetune_lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            model_dim: 32,
            ff_dim: 64,
            max_seq_len: 128,
            finetune_max_seq_len: 50,
            mask_rate: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
            pretrain_batch_size: 256,
            pretrain_lr: 1e-4,
            finetune_batch_size: 32,
            finetune_lr: 2e-5,
            dropout: 0.1,
            epochs: 15,
            patience: 5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad("model_dim must be a positive multiple of heads");
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_seq_len == 0 || self.finetune_max_seq_len == 0 {
            return bad("dimensions must be positive");
        }
        if self.finetune_max_seq_len > self.max_seq_len {
            return bad("finetune_max_seq_len exceeds max_seq_len");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.mask_rate) {
            return bad("rates out of range");
        }
        let keep = 1.0 - self.mask_token_prob - self.random_token_prob;
        if self.mask_token_prob < 0.0 || self.random_token_prob < 0.0 || keep < -1e-12 {
            return bad("mask/random probabilities must be non-negative and sum to at most 1");
        }
        if self.pretrain_batch_size == 0 || self.finetune_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtlAttention {
    /// One attention site on the top shared layer.
    Common,
    /// Shared lower layers; each task owns its top BiGRU layer and attention.
    TaskSpecific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    SingleTask(BiGruConfig),
    Mtl { config: BiGruConfig, attention: MtlAttention },
    HaMtl(HaMtlConfig),
    Encoder(EncoderConfig),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::SingleTask(_) => "single",
            Architecture::Mtl {
                attention: MtlAttention::Common,
                ..
            } => "mtl-common",
            Architecture::Mtl {
                attention: MtlAttention::TaskSpecific,
                ..
            } => "mtl-spec",
            Architecture::HaMtl(c) => match c.order {
                HaOrder::CityFirst => "hamtl-city",
                HaOrder::CountryFirst => "hamtl-country",
            },
            Architecture::Encoder(_) => "encoder",
        }
    }

    pub fn bigru(&self) -> Option<&BiGruConfig> {
        match self {
            Architecture::SingleTask(c) | Architecture::Mtl { config: c, .. } => Some(c),
            Architecture::HaMtl(c) => Some(&c.base),
            Architecture::Encoder(_) => None,
        }
    }

    pub fn max_seq_len(&self) -> usize {
        match self {
            Architecture::Encoder(c) => c.finetune_max_seq_len,
            other => other.bigru().map(|c| c.max_seq_len).unwrap_or(0),
        }
    }
}

/// Everything needed to rebuild a model: architecture, heads and vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub heads: Vec<TaskHead>,
    pub vocab: Vocab,
}

impl ModelSpec {
    pub fn new(arch: Architecture, heads: Vec<TaskHead>, vocab: Vocab) -> Self {
        Self { arch, heads, vocab }
    }

    pub fn head_index(&self, task: Task) -> Option<usize> {
        self.heads.iter().position(|h| h.task == task)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        match &self.arch {
            Architecture::Encoder(c) => c.validate()?,
            other => other.bigru().expect("recurrent").validate()?,
        }
        if self.heads.is_empty() {
            return bad("at least one head is required".into());
        }
        for (i, h) in self.heads.iter().enumerate() {
            if self.heads[..i].iter().any(|o| o.task == h.task) {
                return bad(format!("duplicate head `{}`", h.task));
            }
            match (h.task, h.labels.is_empty()) {
                (Task::Mlm, false) => return bad("the mlm head takes no labels".into()),
                (Task::Mlm, true) => {}
                (t, true) => return bad(format!("head `{t}` has no labels")),
                _ => {}
            }
        }
        let has = |t: Task| self.head_index(t).is_some();
        match &self.arch {
            Architecture::SingleTask(_) => {
                if self.heads.iter().filter(|h| h.task.is_main()).count() > 1 {
                    return bad("a single-task model has one main head".into());
                }
            }
            Architecture::HaMtl(c) => {
                if !Task::GEO.into_iter().all(has) {
                    return bad("HA-MTL needs city, state and country heads".into());
                }
                if c.base.layers != 4 {
                    return bad("HA-MTL has exactly 4 layers".into());
                }
            }
            Architecture::Mtl { config, attention } => {
                if *attention == MtlAttention::TaskSpecific && config.layers < 2 {
                    return bad("task-specific attention needs at least 2 layers".into());
                }
            }
            Architecture::Encoder(_) => {}
        }
        if has(Task::Mlm) && !matches!(self.arch, Architecture::Encoder(_)) {
            return bad("only the encoder has an mlm head".into());
        }
        if self.vocab.len() <= super::vocab::NUM_SPECIALS {
            return bad("vocabulary has no ordinary tokens".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = BiGruConfig::default();
        assert_eq!((c.embed_dim, c.layers, c.units, c.max_seq_len, c.batch_size), (300, 3, 1000, 50, 8));
        assert_eq!((c.dropout, c.lr, c.epochs, c.patience), (0.5, 1e-3, 15, 5));
        let h = HaMtlConfig::new(HaOrder::CityFirst);
        assert_eq!((h.base.layers, h.base.dropout), (4, 0.7));
        let e = EncoderConfig::default();
        assert_eq!((e.max_seq_len, e.finetune_max_seq_len, e.mask_rate), (128, 50, 0.15));
        assert_eq!((e.finetune_batch_size, e.finetune_lr), (32, 2e-5));
    }

    #[test]
    fn supervision_maps() {
        assert_eq!(
            HaMtlConfig::new(HaOrder::CityFirst).supervision(),
            [(2, Task::City), (3, Task::State), (4, Task::Country)]
        );
        assert_eq!(
            HaMtlConfig::new(HaOrder::CountryFirst).supervision(),
            [(2, Task::Country), (3, Task::State), (4, Task::City)]
        );
    }

    #[test]
    fn invalid_configs() {
        let c = BiGruConfig {
            units: 7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = BiGruConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let e = EncoderConfig {
            model_dim: 30,
            heads: 4,
            ..Default::default()
        };
        assert!(e.validate().is_err());
    }

    #[test]
    fn arch_json_round_trip() {
        let a = Architecture::Mtl {
            config: BiGruConfig::default(),
            attention: MtlAttention::TaskSpecific,
        };
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"kind\":\"mtl\""));
        assert_eq!(serde_json::from_str::<Architecture>(&s).unwrap(), a);
        assert_eq!(a.name(), "mtl-spec");
    }
}
