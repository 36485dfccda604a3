//! `key=value` configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Keys are dotted (`train.batch_size`, `reg.lambda`,
//! `domain.shared_map_fraction`); see [`crate::experiments::ExperimentConfig`]
//! for the recognised set.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KeyValues::parse(&text)
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` into `target` when present.
    pub fn set<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.get(key) {
            *target = v
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))?;
        }
        Ok(())
    }

    /// Like [`KeyValues::set`] with `none` mapping to `None`.
    pub fn set_optional<T: FromStr>(&self, key: &str, target: &mut Option<T>) -> Result<()> {
        match self.get(key) {
            None => Ok(()),
            Some("none") => {
                *target = None;
                Ok(())
            }
            Some(v) => {
                *target = Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))?,
                );
                Ok(())
            }
        }
    }

    /// Comma-separated list.
    pub fn set_list<T: FromStr>(&self, key: &str, target: &mut Vec<T>) -> Result<()> {
        if let Some(v) = self.get(key) {
            *target = v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad list item `{s}` for `{key}`")))
                })
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// Errors on any key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown configuration key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_sets() {
        let kv = KeyValues::parse("# comment\n a = 3 \n\nb=none\nc=1,2, 3\n").unwrap();
        let mut a = 0usize;
        let mut b = Some(1.0f64);
        let mut c: Vec<u32> = vec![];
        kv.set("a", &mut a).unwrap();
        kv.set_optional("b", &mut b).unwrap();
        kv.set_list("c", &mut c).unwrap();
        assert_eq!((a, b, c), (3, None, vec![1, 2, 3]));
        assert!(kv.reject_unknown(&["a", "b"]).is_err());
        assert!(kv.reject_unknown(&["a", "b", "c"]).is_ok());
    }

    #[test]
    fn errors() {
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(KeyValues::parse("a=1\na=2\n").is_err());
        let kv = KeyValues::parse("a=x\n").unwrap();
        let mut a = 0usize;
        assert!(matches!(kv.set("a", &mut a), Err(Error::Config(_))));
    }
}
