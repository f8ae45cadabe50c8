//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment that runs to the end of the
//! line; blank lines are ignored. Keys are case-sensitive and may appear at
//! most once. Line numbers are kept so validation errors can point back at
//! the offending line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Parsed key-value configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, Entry>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line_no), format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::config(Some(line_no), "empty key"));
            }
            if value.is_empty() {
                return Err(Error::config(Some(line_no), format!("missing value for `{key}`")));
            }
            let entry = Entry {
                value: value.to_string(),
                line: Some(line_no),
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(Error::config(Some(line_no), format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Builds a config from in-memory pairs (no line information).
    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        let entries = pairs
            .into_iter()
            .map(|(k, v)| {
                (
                    k.into(),
                    Entry {
                        value: v.into(),
                        line: None,
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(
            key.into(),
            Entry {
                value: value.to_string(),
                line: None,
            },
        );
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).and_then(|e| e.line)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present, returning `default` otherwise.
    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(entry) => entry.value.parse::<T>().map_err(|_| {
                Error::config(
                    entry.line,
                    format!("cannot parse `{}` as a {} for `{key}`", entry.value, short_type_name::<T>()),
                )
            }),
        }
    }

    pub fn get_bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(entry) => match entry.value.to_ascii_lowercase().as_str() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                other => Err(Error::config(entry.line, format!("expected a boolean for `{key}`, found `{other}`"))),
            },
        }
    }

    /// Rejects keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (key, entry) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::config(entry.line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, entry) in &self.entries {
            let _ = writeln!(out, "{key} = {}", entry.value);
        }
        out
    }
}

fn short_type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}

/// Formats a float so that parsing it back yields the identical value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let cfg = KvConfig::parse("# header\n\nn_tanks = 6  # six\ntank_area=50.0\n").unwrap();
        assert_eq!(cfg.raw("n_tanks"), Some("6"));
        assert_eq!(cfg.get_or::<f64>("tank_area", 0.0).unwrap(), 50.0);
        assert_eq!(cfg.line_of("tank_area"), Some(4));
    }

    #[test]
    fn reports_line_numbers() {
        let err = KvConfig::parse("a = 1\nbogus line\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err}");

        let cfg = KvConfig::parse("a = 1\nb = x\n").unwrap();
        let err = cfg.get_or::<f64>("b", 0.0).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_unknown_keys() {
        assert!(KvConfig::parse("a = 1\na = 2\n").is_err());
        let cfg = KvConfig::parse("a = 1\nzz = 2\n").unwrap();
        let err = cfg.check_known(&["a"]).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn booleans() {
        let cfg = KvConfig::parse("x = on\ny = false\nz = maybe").unwrap();
        assert!(cfg.get_bool_or("x", false).unwrap());
        assert!(!cfg.get_bool_or("y", true).unwrap());
        assert!(cfg.get_bool_or("z", true).is_err());
        assert!(cfg.get_bool_or("missing", true).unwrap());
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, 50.0, 1e-300, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
