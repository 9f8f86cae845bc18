//! Flat `key = value` run configuration with an effective-value snapshot.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

/// Values from the config file overlaid by command-line flags. Every key a
/// command reads is recorded together with the value it used, so the
/// snapshot covers defaults as well as explicit settings.
#[derive(Debug, Default)]
pub struct Settings {
    explicit: BTreeMap<String, String>,
    used: RefCell<BTreeMap<String, String>>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", i + 1)).into());
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn load(file: Option<&Path>, overrides: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut explicit = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        explicit.extend(overrides);
        Ok(Self {
            explicit,
            used: RefCell::default(),
        })
    }

    /// Typed value of `key`, falling back to `default`.
    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match self.explicit.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| UsageError(format!("config key `{key}`: cannot parse `{raw}`: {e}")))?,
            None => default,
        };
        self.used.borrow_mut().insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.explicit.get(key) {
            Some(raw) => {
                let value = raw
                    .parse::<T>()
                    .map_err(|e| UsageError(format!("config key `{key}`: cannot parse `{raw}`: {e}")))?;
                self.used.borrow_mut().insert(key.to_string(), value.to_string());
                Ok(Some(value))
            }
            None => Ok(None),
        }
    }

    /// Explicit settings plus every value a command has read.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut out = self.explicit.clone();
        out.extend(self.used.borrow().iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }
}
