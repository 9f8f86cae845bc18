//! Architectures, training loops, masked-LM pretraining, distillation and
//! checkpoints.

mod checkpoint;
mod config;
mod data;
mod distill;
mod mlm;
mod net;
mod predict;
mod train;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Architecture, BiGruConfig, EncoderConfig, HaMtlConfig, HaOrder, ModelSpec, MtlAttention};
pub use data::{heads_from, label_of, make_samples};
pub use distill::{distill, DistillConfig, DistillReport};
pub use mlm::{corrupt, mlm_eval_loss, pack_sequences, pretrain_mlm, select_mask_positions, MlmConfig, MlmReport};
pub use net::{ForwardOut, Model};
pub use predict::{predict, predict_ids, HeadOutput, Prediction};
pub use train::{
    dev_accuracy, finetune, interleave_schedule, mtl_finetune, EarlyStopping, Sample, StopDecision, Target, TaskSet, TrainConfig,
    TrainReport,
};
pub use vocab::{model_tokens, Vocab, CLS, MASK, UNK};

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] nncore::NnError),
    #[error("label {label} out of range for head `{head}`")]
    LabelOutOfRange { head: String, label: usize },
    #[error("unknown label `{label}` for head `{head}`")]
    UnknownLabel { head: String, label: String },
    #[error("no main task supplied")]
    NoMainTask,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("label sets differ: {0}")]
    LabelSetMismatch(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    /// True for non-finite losses and other numeric breakdowns.
    pub fn is_numeric(&self) -> bool {
        matches!(self, ModelError::Nn(nncore::NnError::NonFiniteLoss(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    City,
    State,
    Country,
    Diagloss,
    Codesw,
    Mlm,
}

impl Task {
    pub const GEO: [Task; 3] = [Task::City, Task::State, Task::Country];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::City => "city",
            Task::State => "state",
            Task::Country => "country",
            Task::Diagloss => "diagloss",
            Task::Codesw => "codesw",
            Task::Mlm => "mlm",
        }
    }

    /// Geographic tasks; everything else is auxiliary.
    pub fn is_main(self) -> bool {
        matches!(self, Task::City | Task::State | Task::Country)
    }

    pub fn level(self) -> Option<crate::corpus::Level> {
        use crate::corpus::Level;
        match self {
            Task::City => Some(Level::City),
            Task::State => Some(Level::State),
            Task::Country => Some(Level::Country),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Task::City, Task::State, Task::Country, Task::Diagloss, Task::Codesw, Task::Mlm]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Output layer for one task. `labels` is sorted; the masked-LM head has no
/// labels and predicts over the vocabulary instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHead {
    pub task: Task,
    pub labels: Vec<String>,
}

impl TaskHead {
    pub fn new<S: Into<String>>(task: Task, labels: impl IntoIterator<Item = S>) -> Self {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort();
        labels.dedup();
        Self { task, labels }
    }

    pub fn mlm() -> Self {
        Self {
            task: Task::Mlm,
            labels: Vec::new(),
        }
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| ModelError::UnknownLabel {
                head: self.task.to_string(),
                label: label.to_string(),
            })
    }
}
