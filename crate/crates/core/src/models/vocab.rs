use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::text::{strip_diacritics, tokenize_light};

pub const UNK: usize = 0;
pub const MASK: usize = 1;
pub const CLS: usize = 2;
pub(crate) const NUM_SPECIALS: usize = 3;
const SPECIALS: [&str; NUM_SPECIALS] = ["[UNK]", "[MASK]", "[CLS]"];

/// Word-level vocabulary with `[UNK]`, `[MASK]` and `[CLS]` at ids 0–2.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Tokens a model sees for `text`: diacritics stripped, light tokenization.
pub fn model_tokens(text: &str) -> Vec<String> {
    tokenize_light(&strip_diacritics(text))
}

impl Vocab {
    /// Keeps tokens seen at least `min_freq` times, most frequent first
    /// (ties alphabetical).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in model_tokens(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t).filter(|t| !SPECIALS.contains(&t.as_str())))
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids for the first `max_len` tokens; empty text becomes `[UNK]`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = model_tokens(text).iter().take(max_len).map(|t| self.id(t)).collect();
        if ids.is_empty() {
            ids.push(UNK);
        }
        ids
    }
}
