//! Tweet-level random splits and user-disjoint narrow/medium/wide splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nncore::RngStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Level, TweetRecord};

pub type Result<T> = std::result::Result<T, SplitError>;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no city has enough users for the {0} setting")]
    NoEligibleCities(Setting),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("user `{user}` appears under several cities: {cities:?}")]
    UserCityConflict { user: String, cities: Vec<String> },
    #[error("record `{0}` has no location labels")]
    Unlabeled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    TweetRandom,
    UserDisjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Narrow,
    Medium,
    Wide,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Narrow, Setting::Medium, Setting::Wide];

    /// Users a city needs to take part.
    pub fn min_users(self) -> usize {
        match self {
            Setting::Narrow => 16,
            Setting::Medium => 13,
            Setting::Wide => 2,
        }
    }

    /// Users per city moved to TEST.
    pub fn test_users(self) -> usize {
        match self {
            Setting::Narrow | Setting::Medium => 3,
            Setting::Wide => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Narrow => "narrow",
            Setting::Medium => "medium",
            Setting::Wide => "wide",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Setting::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown setting `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunId {
    #[default]
    A,
    B,
    C,
}

impl RunId {
    pub fn offset(self) -> u64 {
        match self {
            RunId::A => 0,
            RunId::B => 1,
            RunId::C => 2,
        }
    }
}

impl FromStr for RunId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(RunId::A),
            "B" | "b" => Ok(RunId::B),
            "C" | "c" => Ok(RunId::C),
            other => Err(format!("unknown run `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub ratios: (f64, f64, f64),
    pub setting: Option<Setting>,
    pub run: RunId,
    pub seed: u64,
    pub per_class_cap: Option<usize>,
    /// Class granularity for counts and capping.
    pub level: Level,
}

impl SplitSpec {
    pub fn random(seed: u64) -> Self {
        Self {
            mode: SplitMode::TweetRandom,
            ratios: (0.8, 0.1, 0.1),
            setting: None,
            run: RunId::A,
            seed,
            per_class_cap: None,
            level: Level::Country,
        }
    }

    pub fn user_disjoint(setting: Setting, run: RunId, seed: u64) -> Self {
        Self {
            mode: SplitMode::UserDisjoint,
            ratios: (1.0, 0.0, 0.0),
            setting: Some(setting),
            run,
            seed,
            per_class_cap: None,
            level: Level::City,
        }
    }

    /// Base seed shifted by the run index.
    pub fn run_seed(&self) -> u64 {
        self.seed.wrapping_add(self.run.offset())
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidSpec(format!("ratios {:?} must sum to 1", self.ratios)));
        }
        if self.per_class_cap == Some(0) {
            return Err(SplitError::InvalidSpec("per_class_cap must be at least 1".into()));
        }
        if self.mode == SplitMode::UserDisjoint && self.setting.is_none() {
            return Err(SplitError::InvalidSpec("user-disjoint mode needs a setting".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPart {
    pub record_ids: Vec<String>,
    pub user_ids: Vec<String>,
    pub class_counts: BTreeMap<String, usize>,
}

impl SplitPart {
    fn build(records: &[&TweetRecord], level: Level) -> Self {
        let mut users = BTreeSet::new();
        let mut class_counts = BTreeMap::new();
        for r in records {
            users.insert(r.user_id.clone());
            if let Some(c) = r.label(level) {
                *class_counts.entry(c.to_string()).or_insert(0) += 1;
            }
        }
        Self {
            record_ids: records.iter().map(|r| r.id.clone()).collect(),
            user_ids: users.into_iter().collect(),
            class_counts,
        }
    }
}

/// Split outcome; serializes as the split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub mode: SplitMode,
    pub setting: Option<Setting>,
    pub run: RunId,
    pub splits: BTreeMap<SplitName, SplitPart>,
}

impl SplitResult {
    pub fn part(&self, name: SplitName) -> &SplitPart {
        &self.splits[&name]
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            self.part(SplitName::Train).record_ids.len(),
            self.part(SplitName::Dev).record_ids.len(),
            self.part(SplitName::Test).record_ids.len(),
        )
    }

    /// Records of one split, in manifest order.
    pub fn select(&self, records: &[TweetRecord], name: SplitName) -> Vec<TweetRecord> {
        let by_id: BTreeMap<&str, &TweetRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        self.part(name)
            .record_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone()))
            .collect()
    }
}

fn assemble(spec: &SplitSpec, parts: [Vec<&TweetRecord>; 3]) -> SplitResult {
    let [train, dev, test] = parts;
    let mut splits = BTreeMap::new();
    splits.insert(SplitName::Train, SplitPart::build(&train, spec.level));
    splits.insert(SplitName::Dev, SplitPart::build(&dev, spec.level));
    splits.insert(SplitName::Test, SplitPart::build(&test, spec.level));
    SplitResult {
        seed: spec.run_seed(),
        mode: spec.mode,
        setting: spec.setting,
        run: spec.run,
        splits,
    }
}

fn floor_count(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio + 1e-9).floor() as usize
}

/// Shuffles records and cuts DEV and TEST by floored ratios; the remainder
/// goes to TRAIN.
pub fn split_random(records: &[TweetRecord], spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    if spec.mode != SplitMode::TweetRandom {
        return Err(SplitError::InvalidSpec("split_random needs tweet_random mode".into()));
    }
    if records.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let root = RngStream::new(spec.run_seed());
    let mut order: Vec<&TweetRecord> = records.iter().collect();
    root.split("shuffle").shuffle(&mut order);
    let n = order.len();
    let n_dev = floor_count(n, spec.ratios.1);
    let n_test = floor_count(n, spec.ratios.2);
    let n_train = n - n_dev - n_test;
    let test = order.split_off(n_train + n_dev);
    let dev = order.split_off(n_train);
    let train = match spec.per_class_cap {
        Some(cap) => cap_per_class(order, cap, spec.level, &mut root.split("cap")),
        None => order,
    };
    Ok(assemble(spec, [train, dev, test]))
}

/// Keeps at most `cap` records per class, chosen uniformly with `rng`.
/// Survivors keep their input order; unlabeled records are kept.
pub fn cap_per_class<'a>(
    train: Vec<&'a TweetRecord>,
    cap: usize,
    level: Level,
    rng: &mut RngStream,
) -> Vec<&'a TweetRecord> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in train.iter().enumerate() {
        if let Some(c) = r.label(level) {
            by_class.entry(c).or_default().push(i);
        }
    }
    let mut drop = BTreeSet::new();
    for (_, mut idx) in by_class {
        if idx.len() > cap {
            rng.shuffle(&mut idx);
            drop.extend(idx.into_iter().skip(cap));
        }
    }
    train
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, r)| r)
        .collect()
}

/// City → users, after checking that each user has exactly one city.
pub fn users_by_city(records: &[TweetRecord]) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut user_city: BTreeMap<&str, &str> = BTreeMap::new();
    let mut cities: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        let city = r.label(Level::City).ok_or_else(|| SplitError::Unlabeled(r.id.clone()))?;
        match user_city.insert(&r.user_id, city) {
            Some(prev) if prev != city => {
                let mut both = vec![prev.to_string(), city.to_string()];
                both.sort();
                return Err(SplitError::UserCityConflict {
                    user: r.user_id.clone(),
                    cities: both,
                });
            }
            _ => {}
        }
        cities.entry(city.to_string()).or_default().insert(r.user_id.clone());
    }
    Ok(cities)
}

/// Cities that take part in `setting`; single-user cities never do.
pub fn eligible_cities(records: &[TweetRecord], setting: Setting) -> Result<BTreeSet<String>> {
    Ok(users_by_city(records)?
        .into_iter()
        .filter(|(_, users)| users.len() > 1 && users.len() >= setting.min_users())
        .map(|(c, _)| c)
        .collect())
}

/// Per eligible city, moves a uniformly drawn set of users to TEST and the
/// rest to TRAIN. There is no DEV split.
pub fn split_user_disjoint(records: &[TweetRecord], spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    let setting = match (spec.mode, spec.setting) {
        (SplitMode::UserDisjoint, Some(s)) => s,
        _ => return Err(SplitError::InvalidSpec("split_user_disjoint needs user_disjoint mode".into())),
    };
    if records.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let cities = users_by_city(records)?;
    let root = RngStream::new(spec.run_seed()).split("user_disjoint");
    let mut test_users = BTreeSet::new();
    let mut train_users = BTreeSet::new();
    for (city, users) in &cities {
        if users.len() < 2 || users.len() < setting.min_users() {
            continue;
        }
        let mut users: Vec<&String> = users.iter().collect();
        root.split(city).shuffle(&mut users);
        let (test, train) = users.split_at(setting.test_users());
        test_users.extend(test.iter().map(|u| u.as_str()));
        train_users.extend(train.iter().map(|u| u.as_str()));
    }
    if test_users.is_empty() {
        return Err(SplitError::NoEligibleCities(setting));
    }
    let train: Vec<&TweetRecord> = records.iter().filter(|r| train_users.contains(r.user_id.as_str())).collect();
    let test: Vec<&TweetRecord> = records.iter().filter(|r| test_users.contains(r.user_id.as_str())).collect();
    let train = match spec.per_class_cap {
        Some(cap) => cap_per_class(train, cap, spec.level, &mut root.split("cap")),
        None => train,
    };
    Ok(assemble(spec, [train, Vec::new(), test]))
}

pub fn split(records: &[TweetRecord], spec: &SplitSpec) -> Result<SplitResult> {
    match spec.mode {
        SplitMode::TweetRandom => split_random(records, spec),
        SplitMode::UserDisjoint => split_user_disjoint(records, spec),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjointReport {
    pub disjoint: bool,
    pub shared_records: Vec<String>,
    pub shared_users: Vec<String>,
}

/// Checks record ids (and user ids in user-disjoint mode) for overlap
/// between splits.
pub fn verify_disjoint(result: &SplitResult) -> DisjointReport {
    fn overlaps<'a>(sets: impl Iterator<Item = &'a Vec<String>>) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut shared = BTreeSet::new();
        for ids in sets {
            let own: BTreeSet<&String> = ids.iter().collect();
            for id in own {
                if !seen.insert(id.clone()) {
                    shared.insert(id.clone());
                }
            }
        }
        shared.into_iter().collect()
    }
    let shared_records = overlaps(result.splits.values().map(|p| &p.record_ids));
    let shared_users = match result.mode {
        SplitMode::UserDisjoint => overlaps(result.splits.values().map(|p| &p.user_ids)),
        SplitMode::TweetRandom => Vec::new(),
    };
    DisjointReport {
        disjoint: shared_records.is_empty() && shared_users.is_empty(),
        shared_records,
        shared_users,
    }
}
