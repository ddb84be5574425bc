//! Flat `key = value` configuration text with `#` comments.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_from_line(text, 1)
    }

    /// Parses `text` whose first line is line `first_line` of the enclosing file.
    pub fn parse_from_line(text: &str, first_line: usize) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = first_line + i;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected `key = value`, found `{content}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(line, "empty key"));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::parse(
                    line,
                    format!("duplicate key `{key}` (first set on line {})", prev.line),
                ));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets or replaces a value (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(Entry {
                key: key.to_string(),
                value,
                line: 0,
            }),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|e| (e.key.as_str(), e.value.as_str()))
    }

    /// Parses `key` if present, reporting the line it came from on failure.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.iter().find(|e| e.key == key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(e.line, format!("invalid value `{}` for `{key}`", e.value))),
        }
    }

    /// Comma-separated list value.
    pub fn parsed_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.iter().find(|e| e.key == key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::parse(e.line, format!("invalid list item `{t}` for `{key}`")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        let known: HashSet<&str> = known.iter().copied().collect();
        match self.entries.iter().find(|e| !known.contains(e.key.as_str())) {
            Some(e) => Err(Error::parse(e.line, format!("unknown key `{}`", e.key))),
            None => Ok(()),
        }
    }

    /// `key=value` lines in insertion order.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}={}\n", e.key, e.value))
            .collect()
    }
}
