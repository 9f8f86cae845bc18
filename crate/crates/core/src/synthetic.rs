//! Generated city/state/country corpus with known structure, used for
//! desk-scale experiments and tests.
//!
//! Every city owns a few exclusive marker words; all cities share a pool of
//! words grouped into fixed phrases. A tweet is one or two (marker, phrase)
//! units, so it is 6 or 12 tokens long and its city is recoverable from any
//! marker.

use std::collections::BTreeMap;

use nncore::RngStream;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gazetteer, GazetteerEntry, LocationHierarchy, TweetRecord};

const LETTERS: [char; 27] = [
    'ا', 'ب', 'ت', 'ث', 'ج', 'ح', 'خ', 'د', 'ذ', 'ر', 'ز', 'س', 'ش', 'ص', 'ض', 'ط', 'ظ', 'ع', 'غ', 'ف', 'ق', 'ك', 'ل',
    'م', 'ن', 'ه', 'و',
];
const FATHA: char = '\u{064E}';

/// Arabic-script pseudo-word for index `i` (two base-27 letters then `ي`).
pub fn pseudo_word(i: usize) -> String {
    assert!(i < LETTERS.len() * LETTERS.len(), "word index out of range");
    [LETTERS[i / LETTERS.len()], LETTERS[i % LETTERS.len()], 'ي'].iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub countries: usize,
    pub states_per_country: usize,
    pub cities_per_state: usize,
    pub markers_per_city: usize,
    pub shared_words: usize,
    pub phrase_len: usize,
    pub users_per_city: usize,
    pub test_users_per_city: usize,
    pub tweets_per_user: usize,
    pub reply_rate: f64,
    pub diacritic_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            countries: 3,
            states_per_country: 2,
            cities_per_state: 2,
            markers_per_city: 5,
            shared_words: 200,
            phrase_len: 5,
            users_per_city: 10,
            test_users_per_city: 2,
            tweets_per_user: 25,
            reply_rate: 0.5,
            diacritic_rate: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<TweetRecord>,
    /// User id → whether the user is held out for testing.
    pub test_users: BTreeMap<String, bool>,
    pub gazetteer: Gazetteer,
}

impl SyntheticCorpus {
    pub fn train(&self) -> Vec<TweetRecord> {
        self.records.iter().filter(|r| !self.test_users[&r.user_id]).cloned().collect()
    }

    pub fn test(&self) -> Vec<TweetRecord> {
        self.records.iter().filter(|r| self.test_users[&r.user_id]).cloned().collect()
    }

    pub fn hierarchies(&self) -> Vec<LocationHierarchy> {
        self.gazetteer.entries().iter().map(GazetteerEntry::hierarchy).collect()
    }
}

pub fn generate(cfg: &SynthConfig) -> SyntheticCorpus {
    let n_cities = cfg.countries * cfg.states_per_country * cfg.cities_per_state;
    let mut entries = Vec::with_capacity(n_cities);
    for k in 0..cfg.countries {
        for s in 0..cfg.states_per_country {
            for c in 0..cfg.cities_per_state {
                // Countries ~10° apart, states ~2°, cities ~0.5°.
                entries.push(GazetteerEntry {
                    city: format!("city_{k}{s}{c}"),
                    state: format!("state_{k}{s}"),
                    country: format!("country_{k}"),
                    lat: 10.0 + 10.0 * k as f64 + 2.0 * s as f64 + 0.5 * c as f64,
                    lon: 20.0 + 10.0 * k as f64 + 2.0 * s as f64,
                    aliases: vec![],
                });
            }
        }
    }
    let gazetteer = Gazetteer::new(entries).expect("generated gazetteer is valid");

    let phrases = cfg.shared_words / cfg.phrase_len.max(1);
    let shared_base = n_cities * cfg.markers_per_city;
    let root = RngStream::new(cfg.seed).split("synthetic");
    let mut records = Vec::new();
    let mut test_users = BTreeMap::new();
    for (ci, entry) in gazetteer.entries().iter().enumerate() {
        let labels = entry.hierarchy();
        for u in 0..cfg.users_per_city {
            let user = format!("{}_u{u:02}", entry.city);
            test_users.insert(user.clone(), u >= cfg.users_per_city - cfg.test_users_per_city);
            let mut rng = root.split(&user);
            for t in 0..cfg.tweets_per_user {
                let units = 1 + rng.below(2);
                let mut words = Vec::new();
                for _ in 0..units {
                    words.push(pseudo_word(ci * cfg.markers_per_city + rng.below(cfg.markers_per_city)));
                    let p = rng.below(phrases);
                    for w in 0..cfg.phrase_len {
                        words.push(pseudo_word(shared_base + p * cfg.phrase_len + w));
                    }
                }
                let is_reply = rng.uniform() < cfg.reply_rate;
                if !is_reply && rng.uniform() < cfg.diacritic_rate {
                    for w in words.iter_mut().skip(1).take(5) {
                        w.insert(w.char_indices().nth(1).map(|(i, _)| i).unwrap_or(w.len()), FATHA);
                    }
                }
                let mut rec = TweetRecord::new(format!("{user}_t{t:03}"), user.clone(), words.join(" "))
                    .with_labels(labels.clone());
                rec.is_reply = is_reply;
                records.push(rec);
            }
        }
    }
    SyntheticCorpus {
        records,
        test_users,
        gazetteer,
    }
}
