//! Proxy labels: diaglossia (MSA vs. dialect) and code-switching.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::text::{count_arabic_words, count_diacritics, foreign_words, is_arabic_word};
use super::{LangTag, TweetRecord};

/// Diacritic count at which a tweet is taken as MSA.
pub const MIN_MSA_DIACRITICS: usize = 5;
pub const MIN_CODESW_ARABIC: usize = 3;
pub const MIN_CODESW_FOREIGN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiaglossLabel {
    #[serde(rename = "MSA")]
    Msa,
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "NONE")]
    None,
}

impl DiaglossLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DiaglossLabel::Msa => "MSA",
            DiaglossLabel::Da => "DA",
            DiaglossLabel::None => "NONE",
        }
    }
}

impl fmt::Display for DiaglossLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// MSA when the tweet carries at least five diacritics; otherwise DA for
/// replies; otherwise no label.
pub fn proxy_label_diaglossia(record: &TweetRecord) -> DiaglossLabel {
    if count_diacritics(&record.text) >= MIN_MSA_DIACRITICS {
        DiaglossLabel::Msa
    } else if record.is_reply {
        DiaglossLabel::Da
    } else {
        DiaglossLabel::None
    }
}

/// Assigns a language code to a non-Arabic token.
pub trait LanguageTagger {
    fn tag(&self, token: &str) -> Option<String>;
}

/// Tags tokens by the majority Unicode script of their letters, using
/// ISO 15924 codes (`Latn`, `Cyrl`, ...).
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptTagger;

fn script_of(c: char) -> &'static str {
    match c as u32 {
        0x0041..=0x024F | 0x1E00..=0x1EFF => "Latn",
        0x0370..=0x03FF => "Grek",
        0x0400..=0x052F => "Cyrl",
        0x0590..=0x05FF => "Hebr",
        0x0900..=0x097F => "Deva",
        0x0E00..=0x0E7F => "Thai",
        0x3040..=0x30FF => "Kana",
        0x4E00..=0x9FFF | 0x3400..=0x4DBF => "Hani",
        0xAC00..=0xD7AF | 0x1100..=0x11FF => "Hang",
        0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF => "Arab",
        _ => "Zyyy",
    }
}

impl LanguageTagger for ScriptTagger {
    fn tag(&self, token: &str) -> Option<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in token.chars().filter(|c| c.is_alphabetic()) {
            *counts.entry(script_of(c)).or_default() += 1;
        }
        // Highest count wins; BTreeMap order makes ties deterministic.
        counts
            .into_iter()
            .filter(|(s, _)| *s != "Arab")
            .fold(None, |best: Option<(&str, usize)>, (s, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((s, n)),
            })
            .map(|(s, _)| s.to_string())
    }
}

/// Keeps records with at least three Arabic and at least four non-Arabic
/// words, attaching per-token language tags and the dominant foreign
/// language.
pub fn extract_codesw(records: &[TweetRecord], tagger: &dyn LanguageTagger) -> Vec<TweetRecord> {
    let mut out = Vec::new();
    for r in records {
        if count_arabic_words(&r.text) < MIN_CODESW_ARABIC || foreign_words(&r.text).count() < MIN_CODESW_FOREIGN {
            continue;
        }
        let foreign: Vec<&str> = foreign_words(&r.text).collect();
        let mut tags = Vec::new();
        let mut votes: BTreeMap<String, usize> = BTreeMap::new();
        for (i, token) in r.text.split_whitespace().enumerate() {
            if is_arabic_word(token) {
                tags.push(LangTag {
                    start: i,
                    end: i + 1,
                    lang: "ar".to_string(),
                });
            } else if foreign.contains(&token) {
                if let Some(lang) = tagger.tag(token) {
                    *votes.entry(lang.clone()).or_default() += 1;
                    tags.push(LangTag { start: i, end: i + 1, lang });
                }
            }
        }
        let dominant = votes
            .iter()
            .fold(None, |best: Option<(&String, usize)>, (l, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((l, n)),
            })
            .map(|(l, _)| l.clone());
        let mut kept = r.clone();
        kept.lang_tags = Some(tags);
        kept.foreign_language = dominant;
        out.push(kept);
    }
    out
}
