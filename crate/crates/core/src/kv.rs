//! Flat `key = value` text records: one pair per line, `#` starts a comment.

use crate::error::{Error, Result};

/// Parsed pairs in file order. Duplicate keys are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvRecord {
    pairs: Vec<(String, String)>,
}

impl KvRecord {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rec = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, found `{line}`"),
                ));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}", lineno + 1), "empty key"));
            }
            if rec.get(k).is_some() {
                return Err(Error::config(k, "key appears more than once"));
            }
            rec.pairs.push((k.to_string(), v.to_string()));
        }
        Ok(rec)
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.pairs.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, _)) => Err(Error::config(k.as_str(), "unknown key")),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Reads and parses `key` with `FromStr`, leaving `slot` unchanged when absent.
pub(crate) fn read<T: std::str::FromStr>(rec: &KvRecord, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = rec.get(key) {
        *slot = v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))?;
    }
    Ok(())
}
