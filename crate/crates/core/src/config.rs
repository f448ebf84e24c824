//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may contain dots
//! (`col.id = Problem`); values run to the end of the line and are trimmed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse(format!("config line {}: empty key", lineno + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Typed lookup; a present but unparseable value is an error, a missing one falls back.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let cfg = KvConfig::parse("# header\ncol.id = Problem\n\n  aggregate=mean  \n").unwrap();
        assert_eq!(cfg.get("col.id"), Some("Problem"));
        assert_eq!(cfg.get("aggregate"), Some("mean"));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KvConfig::parse("just words").is_err());
    }

    #[test]
    fn typed_lookup() {
        let cfg = KvConfig::parse("g = 12\nbad = x").unwrap();
        assert_eq!(cfg.get_or("g", 1usize).unwrap(), 12);
        assert_eq!(cfg.get_or("absent", 3usize).unwrap(), 3);
        assert!(cfg.get_or("bad", 0usize).is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = KvConfig::parse("b = 2\na = 1\n").unwrap();
        assert_eq!(KvConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
