//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Values run to the end
//! of the line with surrounding whitespace trimmed; `\n` inside a value is a
//! newline and `\\` a backslash.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n")
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.to_string(), unescape(v.trim())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Parsed value of `key`, `None` when absent.
    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    /// Fails on the first key not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    /// Values of `other` replace ours.
    pub fn merged(&self, other: &KvConfig) -> KvConfig {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.clone());
        KvConfig { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {}\n", escape(v))).collect()
    }
}

/// First 8 bytes of SHA-256, little endian. Stable across runs and platforms.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stable_hash_str(s: &str) -> u64 {
    stable_hash(&[s.as_bytes()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_escapes_and_types() {
        let c = KvConfig::parse("# comment\n\nlearning_rate = 1e-3\nprompt = a\\nb \\\\ c\n max_epochs=200 \n").unwrap();
        assert_eq!(c.parse_value::<f64>("learning_rate").unwrap(), Some(1e-3));
        assert_eq!(c.parse_value::<usize>("max_epochs").unwrap(), Some(200));
        assert_eq!(c.get("prompt"), Some("a\nb \\ c"));
        assert_eq!(c.parse_value::<usize>("missing").unwrap(), None);
        assert!(c.parse_value::<usize>("learning_rate").is_err());
        assert_eq!(KvConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(KvConfig::parse("novalue").is_err());
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        assert!(KvConfig::parse(" = 2").is_err());
        let c = KvConfig::parse("a = 1").unwrap();
        assert!(c.check_known(&["b"]).is_err());
        assert!(c.check_known(&["a"]).is_ok());
    }

    #[test]
    fn merge_prefers_other() {
        let a = KvConfig::parse("x = 1\ny = 2").unwrap();
        let b = KvConfig::parse("y = 3").unwrap();
        let m = a.merged(&b);
        assert_eq!((m.get("x"), m.get("y")), (Some("1"), Some("3")));
    }

    #[test]
    fn hash_is_stable_and_length_prefixed() {
        assert_eq!(stable_hash_str("abc"), stable_hash_str("abc"));
        assert_ne!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"a", b"bc"]));
    }
}
