//! Tweet records, preprocessing, proxy labels and location handling.

mod io;
mod location;
mod proxy;
pub mod text;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_jsonl, write_jsonl, read_records, write_records};
pub use location::{
    propagate_labels, resolve_location, AliasTable, Gazetteer, GazetteerEntry, Hierarchy, Level,
};
pub use proxy::{extract_codesw, proxy_label_diaglossia, DiaglossLabel, LanguageTagger, ScriptTagger, MIN_CODESW_ARABIC, MIN_CODESW_FOREIGN, MIN_MSA_DIACRITICS};
pub use text::{count_arabic_words, count_diacritics, normalize_text, strip_diacritics, tokenize_light};

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("unresolved location `{0}`")]
    Unresolved(String),
    #[error("location `{raw}` is ambiguous between {candidates:?}")]
    Ambiguous { raw: String, candidates: Vec<String> },
    #[error("tweet by unknown user `{0}`")]
    MissingUser(String),
    #[error("unknown city `{0}`")]
    UnknownCity(String),
    #[error("hierarchy conflict: {0}")]
    HierarchyConflict(String),
}

/// City / state / country label triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationHierarchy {
    pub city: String,
    pub state: String,
    pub country: String,
}

impl LocationHierarchy {
    pub fn new(city: impl Into<String>, state: impl Into<String>, country: impl Into<String>) -> Self {
        Self {
            city: city.into(),
            state: state.into(),
            country: country.into(),
        }
    }

    pub fn at(&self, level: Level) -> &str {
        match level {
            Level::City => &self.city,
            Level::State => &self.state,
            Level::Country => &self.country,
        }
    }
}

/// Language tag over a half-open range of whitespace-token indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangTag {
    pub start: usize,
    pub end: usize,
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordJson", into = "RecordJson")]
pub struct TweetRecord {
    pub id: String,
    pub user_id: String,
    pub text: String,
    pub is_retweet: bool,
    pub is_reply: bool,
    pub labels: Option<LocationHierarchy>,
    pub lang_tags: Option<Vec<LangTag>>,
    /// Dominant non-Arabic language, set by code-switching extraction.
    pub foreign_language: Option<String>,
}

impl TweetRecord {
    pub fn new(id: impl Into<String>, user_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            user_id: user_id.into(),
            text: text.into(),
            is_retweet: false,
            is_reply: false,
            labels: None,
            lang_tags: None,
            foreign_language: None,
        }
    }

    pub fn with_labels(mut self, labels: LocationHierarchy) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn label(&self, level: Level) -> Option<&str> {
        self.labels.as_ref().map(|l| l.at(level))
    }
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    id: String,
    user_id: String,
    text: String,
    #[serde(default)]
    is_retweet: bool,
    #[serde(default)]
    is_reply: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lang_tags: Option<Vec<LangTag>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    foreign_language: Option<String>,
}

impl TryFrom<RecordJson> for TweetRecord {
    type Error = String;

    fn try_from(r: RecordJson) -> std::result::Result<Self, String> {
        if r.id.is_empty() {
            return Err("empty id".into());
        }
        let labels = match (r.city, r.state, r.country) {
            (Some(city), Some(state), Some(country)) => Some(LocationHierarchy { city, state, country }),
            (None, None, None) => None,
            _ => return Err(format!("record {}: city, state and country must be given together", r.id)),
        };
        Ok(TweetRecord {
            id: r.id,
            user_id: r.user_id,
            text: r.text,
            is_retweet: r.is_retweet,
            is_reply: r.is_reply,
            labels,
            lang_tags: r.lang_tags,
            foreign_language: r.foreign_language,
        })
    }
}

impl From<TweetRecord> for RecordJson {
    fn from(r: TweetRecord) -> Self {
        let (city, state, country) = match r.labels {
            Some(l) => (Some(l.city), Some(l.state), Some(l.country)),
            None => (None, None, None),
        };
        RecordJson {
            id: r.id,
            user_id: r.user_id,
            text: r.text,
            is_retweet: r.is_retweet,
            is_reply: r.is_reply,
            city,
            state,
            country,
            lang_tags: r.lang_tags,
            foreign_language: r.foreign_language,
        }
    }
}

/// Ids must be non-empty and unique within a corpus.
pub fn validate_ids(records: &[TweetRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if r.id.is_empty() {
            return Err(CorpusError::Invalid("empty id".into()));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::Invalid(format!("duplicate id `{}`", r.id)));
        }
    }
    Ok(())
}

/// Minimum number of Arabic words a tweet needs to survive preprocessing.
pub const MIN_ARABIC_WORDS: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input: usize,
    pub retweets_removed: usize,
    pub too_few_arabic_words: usize,
    pub kept: usize,
}

/// Drops retweets, normalizes text, then drops tweets with fewer than
/// [`MIN_ARABIC_WORDS`] Arabic words. Order of survivors is preserved.
pub fn preprocess(records: Vec<TweetRecord>) -> (Vec<TweetRecord>, PreprocessReport) {
    let mut report = PreprocessReport {
        input: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for mut r in records {
        if r.is_retweet {
            report.retweets_removed += 1;
            continue;
        }
        r.text = normalize_text(&r.text);
        if !passes_arabic_filter(&r) {
            report.too_few_arabic_words += 1;
            continue;
        }
        kept.push(r);
    }
    report.kept = kept.len();
    (kept, report)
}

pub fn passes_arabic_filter(record: &TweetRecord) -> bool {
    count_arabic_words(&record.text) >= MIN_ARABIC_WORDS
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub tweets_per_class: BTreeMap<Level, BTreeMap<String, usize>>,
    pub users_per_class: BTreeMap<Level, BTreeMap<String, usize>>,
    pub tokens: usize,
    pub vocabulary: usize,
}

impl CorpusStats {
    pub fn compute(records: &[TweetRecord]) -> Self {
        let mut stats = CorpusStats {
            records: records.len(),
            ..Default::default()
        };
        let mut users: BTreeMap<Level, BTreeMap<String, BTreeSet<&str>>> = BTreeMap::new();
        let mut vocab = BTreeSet::new();
        for r in records {
            let tokens = tokenize_light(&r.text);
            stats.tokens += tokens.len();
            vocab.extend(tokens);
            let Some(labels) = &r.labels else { continue };
            for level in Level::ALL {
                let class = labels.at(level).to_string();
                *stats
                    .tweets_per_class
                    .entry(level)
                    .or_default()
                    .entry(class.clone())
                    .or_default() += 1;
                users
                    .entry(level)
                    .or_default()
                    .entry(class)
                    .or_default()
                    .insert(&r.user_id);
            }
        }
        stats.vocabulary = vocab.len();
        stats.users_per_class = users
            .into_iter()
            .map(|(level, m)| (level, m.into_iter().map(|(c, u)| (c, u.len())).collect()))
            .collect();
        stats
    }
}
