//! Flat `section.key = value` configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Keys are lowercase dotted paths, values run to the end of the
//! line with surrounding whitespace trimmed. A key may appear only once.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};
use crate::timegrid::io::parse_timestamp;
use crate::timegrid::Window;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn valid_key(key: &str) -> bool {
    let mut parts = key.split('.');
    let ok = |p: &str| !p.is_empty() && p.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    match (parts.next(), parts.next()) {
        (Some(a), Some(b)) => ok(a) && ok(b) && parts.all(ok),
        _ => false,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| Error::Parse {
                position: line,
                message: format!("expected `section.key = value`, found `{s}`"),
            })?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(Error::Parse { position: line, message: format!("malformed key `{key}`") });
            }
            if let Some(prev) = entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line }) {
                return Err(Error::Parse {
                    position: line,
                    message: format!("`{key}` already set on line {}", prev.line),
                });
            }
        }
        Ok(Config { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn bad(&self, key: &str, message: impl Display) -> Error {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        Error::Parse { position: line, message: format!("`{key}`: {message}") }
    }

    /// Parsed value of `key`, `None` when absent.
    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key).map(|v| v.parse::<T>().map_err(|e| self.bad(key, e))).transpose()
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(self.bad(key, format!("expected true or false, found `{other}`"))),
            })
            .transpose()
    }

    /// Comma-separated list; empty items are dropped.
    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
    }

    /// A window written `start..end` or the name of a preset.
    pub fn window(&self, key: &str) -> Result<Option<Window>> {
        self.get(key).map(|v| parse_window(v).map_err(|e| self.bad(key, e))).transpose()
    }

    /// Fails on the first key outside `known` (prefixes ending in `.` match
    /// whole sections).
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (key, e) in &self.entries {
            let hit = known.iter().any(|k| if k.ends_with('.') { key.starts_with(k) } else { key == k });
            if !hit {
                return Err(Error::Parse { position: e.line, message: format!("unknown key `{key}`") });
            }
        }
        Ok(())
    }

    /// Sorted `key = value` lines, independent of layout and comments.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }
}

fn at(s: &str) -> DateTime<Utc> {
    parse_timestamp(s).expect("preset dates are valid")
}

/// Named windows of the original study.
pub const WINDOW_PRESETS: [(&str, &str, &str); 5] = [
    ("open-train", "2013-01-08", "2022-01-09"),
    ("test", "2022-01-09", "2023-02-28"),
    ("sobriety", "2022-10-10", "2023-03-01"),
    ("seasonality-train", "2014-01-01", "2018-01-01"),
    ("residuals", "2018-01-01", "2023-03-01"),
];

pub fn window_preset(name: &str) -> Option<Window> {
    WINDOW_PRESETS.iter().find(|(n, _, _)| *n == name).map(|(_, a, b)| Window { start: at(a), end: at(b) })
}

/// Parses `start..end` (ISO dates or timestamps) or a preset name.
pub fn parse_window(s: &str) -> Result<Window> {
    let s = s.trim();
    match s.split_once("..") {
        Some((a, b)) => Window::new(parse_timestamp(a)?, parse_timestamp(b)?),
        None => window_preset(s).ok_or_else(|| {
            let names: Vec<&str> = WINDOW_PRESETS.iter().map(|p| p.0).collect();
            Error::usage(format!("unknown window `{s}` (use start..end or one of {})", names.join(", ")))
        }),
    }
}
