use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::io::read_tsv;
use super::{CorpusError, LocationHierarchy, Result, TweetRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    City,
    State,
    Country,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::City, Level::State, Level::Country];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::City => "city",
            Level::State => "state",
            Level::Country => "country",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "city" => Ok(Level::City),
            "state" => Ok(Level::State),
            "country" => Ok(Level::Country),
            other => Err(format!("unknown level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub city: String,
    pub state: String,
    pub country: String,
    pub lat: f64,
    pub lon: f64,
    pub aliases: Vec<String>,
}

impl GazetteerEntry {
    pub fn hierarchy(&self) -> LocationHierarchy {
        LocationHierarchy::new(&self.city, &self.state, &self.country)
    }
}

fn fold_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub const GAZETTEER_HEADER: [&str; 6] = ["city", "state", "country", "lat", "lon", "aliases"];

/// Validated set of cities with coordinates and alias index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    by_key: BTreeMap<String, BTreeSet<usize>>,
    by_city: BTreeMap<String, BTreeSet<usize>>,
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        let mut state_country: BTreeMap<(&str, &str), ()> = BTreeMap::new();
        let mut state_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for e in &entries {
            if !(-90.0..=90.0).contains(&e.lat) || !(-180.0..=180.0).contains(&e.lon) {
                return Err(CorpusError::Invalid(format!("{}: coordinates out of range", e.city)));
            }
            if !pairs.insert((e.city.as_str(), e.country.as_str())) {
                return Err(CorpusError::Invalid(format!("duplicate city `{}` in {}", e.city, e.country)));
            }
            if let Some(prev) = state_owner.insert(&e.state, &e.country) {
                if prev != e.country {
                    return Err(CorpusError::HierarchyConflict(format!(
                        "state `{}` belongs to both {prev} and {}",
                        e.state, e.country
                    )));
                }
            }
            state_country.insert((&e.state, &e.country), ());
        }
        let mut by_key: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        let mut by_city: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_city.entry(e.city.clone()).or_default().insert(i);
            by_key.entry(fold_key(&e.city)).or_default().insert(i);
            for a in &e.aliases {
                by_key.entry(fold_key(a)).or_default().insert(i);
            }
        }
        Ok(Self {
            entries,
            by_key,
            by_city,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_tsv(path)?;
        let mut it = rows.into_iter();
        let parse_err = |line: usize, message: String| CorpusError::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        match it.next() {
            Some((_, header)) if header == GAZETTEER_HEADER => {}
            Some((line, header)) => return Err(parse_err(line, format!("bad header {header:?}"))),
            None => return Err(parse_err(0, "empty gazetteer".into())),
        }
        let mut entries = Vec::new();
        for (line, cols) in it {
            if cols.len() < 5 || cols.len() > 6 {
                return Err(parse_err(line, format!("expected 6 columns, got {}", cols.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(line, format!("`{s}`: {e}")));
            entries.push(GazetteerEntry {
                city: cols[0].trim().to_string(),
                state: cols[1].trim().to_string(),
                country: cols[2].trim().to_string(),
                lat: num(&cols[3])?,
                lon: num(&cols[4])?,
                aliases: cols
                    .get(5)
                    .map(|a| a.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect())
                    .unwrap_or_default(),
            });
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = GAZETTEER_HEADER.join("\t");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.city,
                e.state,
                e.country,
                e.lat,
                e.lon,
                e.aliases.join(";")
            ));
        }
        out
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    /// Entry for a city label; fails if the name is missing or shared by
    /// several countries.
    pub fn city(&self, name: &str) -> Option<&GazetteerEntry> {
        match self.by_city.get(name) {
            Some(ids) if ids.len() == 1 => ids.first().map(|&i| &self.entries[i]),
            _ => None,
        }
    }

    pub fn hierarchy(&self) -> Result<Hierarchy> {
        Hierarchy::from_triples(self.entries.iter().map(GazetteerEntry::hierarchy))
    }
}

/// Maps free-form aliases to a (city, country) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasTable {
    map: BTreeMap<String, (String, String)>,
}

impl AliasTable {
    pub fn new<I, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let map = rows
            .into_iter()
            .map(|(a, c, k)| (fold_key(&a.into()), (c.into(), k.into())))
            .collect();
        Self { map }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (line, cols) in read_tsv(path)? {
            if cols == ["alias", "city", "country"] {
                continue;
            }
            if cols.len() != 3 {
                return Err(CorpusError::Parse {
                    path: path.display().to_string(),
                    line,
                    message: format!("expected 3 columns, got {}", cols.len()),
                });
            }
            rows.push((cols[0].clone(), cols[1].trim().to_string(), cols[2].trim().to_string()));
        }
        Ok(Self::new(rows))
    }
}

/// Looks up a profile location string: exact city name, then gazetteer
/// aliases, then the alias table. Matching is case-insensitive and ignores
/// surrounding or repeated whitespace. A trailing `, <country>` narrows the
/// match.
pub fn resolve_location(raw: &str, gazetteer: &Gazetteer, aliases: &AliasTable) -> Result<LocationHierarchy> {
    let unresolved = || CorpusError::Unresolved(raw.to_string());
    let (place, country) = match raw.rsplit_once(',') {
        Some((p, c)) if !c.trim().is_empty() => (fold_key(p), Some(fold_key(c))),
        _ => (fold_key(raw), None),
    };
    if place.is_empty() {
        return Err(unresolved());
    }

    let mut candidates: BTreeSet<usize> = gazetteer.by_key.get(&place).cloned().unwrap_or_default();
    if let Some((city, ctry)) = aliases.map.get(&place) {
        candidates.extend(
            gazetteer
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| &e.city == city && &e.country == ctry)
                .map(|(i, _)| i),
        );
    }
    if let Some(c) = &country {
        candidates.retain(|&i| fold_key(&gazetteer.entries[i].country) == *c);
    }
    match candidates.len() {
        0 => Err(unresolved()),
        1 => Ok(gazetteer.entries[*candidates.first().unwrap()].hierarchy()),
        _ => Err(CorpusError::Ambiguous {
            raw: raw.to_string(),
            candidates: candidates
                .iter()
                .map(|&i| format!("{}, {}", gazetteer.entries[i].city, gazetteer.entries[i].country))
                .collect(),
        }),
    }
}

/// City → state → country mapping; both steps are functions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    city_state: BTreeMap<String, String>,
    state_country: BTreeMap<String, String>,
}

impl Hierarchy {
    pub fn from_triples(triples: impl IntoIterator<Item = LocationHierarchy>) -> Result<Self> {
        let mut h = Hierarchy::default();
        for t in triples {
            h.insert(t)?;
        }
        Ok(h)
    }

    pub fn insert(&mut self, t: LocationHierarchy) -> Result<()> {
        if let Some(prev) = self.city_state.get(&t.city) {
            if *prev != t.state {
                return Err(CorpusError::HierarchyConflict(format!(
                    "city `{}` under both `{prev}` and `{}`",
                    t.city, t.state
                )));
            }
        }
        if let Some(prev) = self.state_country.get(&t.state) {
            if *prev != t.country {
                return Err(CorpusError::HierarchyConflict(format!(
                    "state `{}` under both `{prev}` and `{}`",
                    t.state, t.country
                )));
            }
        }
        self.city_state.insert(t.city, t.state.clone());
        self.state_country.insert(t.state, t.country);
        Ok(())
    }

    /// Parent of `city` at `level` (identity for `Level::City`).
    pub fn project(&self, city: &str, level: Level) -> Result<String> {
        let state = self
            .city_state
            .get(city)
            .ok_or_else(|| CorpusError::UnknownCity(city.to_string()))?;
        Ok(match level {
            Level::City => city.to_string(),
            Level::State => state.clone(),
            Level::Country => self.state_country[state].clone(),
        })
    }

    pub fn state_to_country(&self, state: &str) -> Option<&str> {
        self.state_country.get(state).map(String::as_str)
    }

    pub fn triple(&self, city: &str) -> Result<LocationHierarchy> {
        Ok(LocationHierarchy::new(
            city,
            self.project(city, Level::State)?,
            self.project(city, Level::Country)?,
        ))
    }

    pub fn cities(&self) -> impl Iterator<Item = &str> {
        self.city_state.keys().map(String::as_str)
    }
}

/// Copies each user's label triple onto their tweets. In strict mode a
/// tweet by an unknown user is an error; otherwise it is dropped.
pub fn propagate_labels(
    users: &BTreeMap<String, LocationHierarchy>,
    tweets: Vec<TweetRecord>,
    strict: bool,
) -> Result<Vec<TweetRecord>> {
    let mut out = Vec::with_capacity(tweets.len());
    for mut t in tweets {
        match users.get(&t.user_id) {
            Some(l) => {
                t.labels = Some(l.clone());
                out.push(t);
            }
            None if strict => return Err(CorpusError::MissingUser(t.user_id)),
            None => {}
        }
    }
    Ok(out)
}
