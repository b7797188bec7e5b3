//! Plain-text `key = value` configuration merged under command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Blank lines and `#` comments are ignored; keys may use `-` or `_`.
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("config line {}: expected key = value", ln + 1)))?;
            let key = k.trim().replace('_', "-");
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Failure::config(format!("config key {key} given twice")));
            }
        }
        Ok(ConfigFile { values })
    }

    /// The flag value if present, else the parsed config entry.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Failure::config(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }

    pub fn flag(&self, key: &str, flag: bool) -> Result<bool, Failure> {
        Ok(flag || self.pick::<bool>(key, None)?.unwrap_or(false))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Three comma-separated numbers, or a single number used for all axes.
pub fn parse_triple<T: FromStr + Copy>(s: &str) -> Result<[T; 3], String> {
    let parts: Result<Vec<T>, _> = s.split(',').map(|p| p.trim().parse::<T>()).collect();
    match parts.map_err(|_| format!("cannot parse {s:?}"))?.as_slice() {
        [v] => Ok([*v; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected one or three values, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple<T>(pub [T; 3]);

impl<T: FromStr + Copy> FromStr for Triple<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_triple(s).map(Triple)
    }
}

/// Comma-separated label ids; empty means none.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelList(pub BTreeSet<u32>);

impl FromStr for LabelList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<u32>().map_err(|_| format!("bad label id {p:?}")))
            .collect::<Result<_, _>>()
            .map(LabelList)
    }
}
