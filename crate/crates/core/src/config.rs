//! Flat `key = value` run configuration with command-line overrides.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Every command declares its keys and defaults, unknown keys are
//! rejected, and the hash covers the command name and every resolved value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A configuration key, its default (if any) and a one-line description.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    command: String,
    values: BTreeMap<String, String>,
}

/// Parses a configuration document into key/value pairs.
pub fn parse_document(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::validation(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `KEY=VALUE` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("override {s:?} is not KEY=VALUE")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Resolves defaults, then the document at `file`, then `overrides`.
    pub fn load(
        command: &str,
        keys: &[Key],
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            pairs.extend(parse_document(&text)?);
        }
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(command, keys, &pairs)
    }

    pub fn from_pairs(command: &str, keys: &[Key], pairs: &[(String, String)]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for k in keys {
            if let Some(d) = k.default {
                values.insert(k.name.to_string(), d.to_string());
            }
        }
        for (k, v) in pairs {
            if !keys.iter().any(|key| key.name == k) {
                return Err(Error::validation(format!(
                    "unknown key {k:?} for {command}; known keys: {}",
                    keys.iter().map(|k| k.name).collect::<Vec<_>>().join(", ")
                )));
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
        })
    }

    /// Sets `key` unless it already has a value.
    pub fn fill(&mut self, key: &str, value: &str) {
        if self.get(key).is_none() {
            self.values.insert(key.to_string(), value.to_string());
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::validation(format!("{} needs {key:?}", self.command)))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::validation(format!("{key} = {v:?} is not a valid value")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, self.require(key)?)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key, self.require(key)?)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key, self.require(key)?)?;
        if !v.is_finite() {
            return Err(Error::validation(format!("{key} must be finite")));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.require(key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::validation(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key).map(|v| self.parsed(key, v)).transpose()
    }

    /// Comma-separated list of positive integers.
    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.require(key)?
            .split(',')
            .map(|s| self.parsed(key, s.trim()))
            .collect()
    }

    pub fn opt_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.get(key) {
            Some(_) => self.usize_list(key).map(Some),
            None => Ok(None),
        }
    }

    /// Hex SHA-256 over the command name and every resolved value.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(b"\n");
        for (k, v) in &self.values {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// The resolved configuration as a loadable document.
    pub fn snapshot(&self) -> String {
        let mut s = format!("# command: {}\n# config hash: {}\n", self.command, self.hash());
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Help text listing every key of a command.
pub fn describe(keys: &[Key]) -> String {
    let width = keys.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (set in --config or with --set KEY=VALUE):\n");
    for k in keys {
        let _ = writeln!(
            s,
            "  {:width$}  {}{}",
            k.name,
            k.help,
            k.default.map_or(String::new(), |d| format!(" [default: {d}]")),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[Key] = &[
        key("bits", Some("16"), "code length"),
        key("data", None, "input"),
        key("rate", Some("0.5"), "rate"),
    ];

    #[test]
    fn precedence_defaults_file_overrides() {
        let doc = parse_document("# comment\n\nbits = 24\ndata = a.bfm\n").unwrap();
        let mut pairs = doc;
        pairs.push(("bits".into(), "32".into()));
        let c = RunConfig::from_pairs("train", KEYS, &pairs).unwrap();
        assert_eq!(c.usize("bits").unwrap(), 32);
        assert_eq!(c.require("data").unwrap(), "a.bfm");
        assert_eq!(c.f64("rate").unwrap(), 0.5);
    }

    #[test]
    fn unknown_and_malformed_entries_are_rejected() {
        assert!(parse_document("novalue\n").is_err());
        assert!(parse_override("bits").is_err());
        let bad = [("bitz".to_string(), "3".to_string())];
        assert!(RunConfig::from_pairs("train", KEYS, &bad).unwrap_err().is_validation());
        let c = RunConfig::from_pairs("train", KEYS, &[("bits".into(), "x".into())]).unwrap();
        assert!(c.usize("bits").is_err());
        assert!(c.require("data").is_err());
    }

    #[test]
    fn hash_tracks_values_and_command() {
        let a = RunConfig::from_pairs("train", KEYS, &[]).unwrap();
        let b = RunConfig::from_pairs("train", KEYS, &[("bits".into(), "16".into())]).unwrap();
        let c = RunConfig::from_pairs("train", KEYS, &[("bits".into(), "8".into())]).unwrap();
        let d = RunConfig::from_pairs("encode", KEYS, &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.hash(), d.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn snapshot_reloads_to_the_same_hash() {
        let c = RunConfig::from_pairs("train", KEYS, &[("data".into(), "x.bfm".into())]).unwrap();
        let pairs = parse_document(&c.snapshot()).unwrap();
        let again = RunConfig::from_pairs("train", KEYS, &pairs).unwrap();
        assert_eq!(again.hash(), c.hash());
    }
}
