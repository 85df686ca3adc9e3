//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! a repeated key is a parse error so typos in long layout files surface early.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_source(text, None)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_source(&text, Some(path.to_path_buf()))
    }

    fn parse_with_source(text: &str, source: Option<PathBuf>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let err_path = source.clone().unwrap_or_else(|| PathBuf::from("<inline>"));
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: err_path,
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: err_path,
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    path: err_path,
                    line: idx + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries, source })
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Copy without the listed keys.
    pub fn without(&self, keys: &[&str]) -> Self {
        let mut out = self.clone();
        out.entries.retain(|k, _| !keys.contains(&k.as_str()));
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Typed lookup; missing keys return `Ok(None)`.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    /// Overwrite `slot` when the key is present.
    pub fn apply<T>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated list, e.g. `seeds = 1, 2, 3`.
    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.entries.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    /// Serialise back to `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
