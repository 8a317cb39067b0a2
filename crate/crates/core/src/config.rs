//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! consumed by the caller; leftovers are reported as errors so a typo in a
//! sweep file cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
    origin: String,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, format!("expected key=value, got `{line}`")))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(origin, i + 1, "empty key"));
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(origin, i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues {
            entries,
            origin: origin.to_string(),
        })
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::parse(&self.origin, line, format!("bad value `{v}` for `{key}`"))
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if let Some((k, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::parse(self.origin, line, format!("unknown key `{k}`")));
        }
        Ok(())
    }
}
