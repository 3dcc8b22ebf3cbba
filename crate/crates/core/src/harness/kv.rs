//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}`: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("unknown key(s): {0}")]
    Unknown(String),
}

/// Parsed entries; typed getters consume keys so leftovers can be reported.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(KvError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key`, leaving `target` untouched when absent.
    pub fn take<T>(&mut self, key: &str, target: &mut T) -> Result<(), KvError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.entries.remove(key) {
            *target = v.parse().map_err(|e: T::Err| KvError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Comma-separated list variant of [`KvMap::take`].
    pub fn take_list<T>(&mut self, key: &str, target: &mut Vec<T>) -> Result<(), KvError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.entries.remove(key) {
            *target = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|e: T::Err| KvError::BadValue {
                    key: key.to_string(),
                    value: v.clone(),
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn take_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<(), KvError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(KvError::Unknown(
                self.entries.keys().cloned().collect::<Vec<_>>().join(", "),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_consumes() {
        let mut kv = KvMap::parse("# comment\n a = 3 \n\nlist = 1, 2,3\nname=x y\n").unwrap();
        let mut a = 0usize;
        let mut list: Vec<u32> = vec![];
        let mut missing = 7.5f64;
        kv.take("a", &mut a).unwrap();
        kv.take_list("list", &mut list).unwrap();
        kv.take("missing", &mut missing).unwrap();
        assert_eq!((a, list, missing), (3, vec![1, 2, 3], 7.5));
        assert_eq!(kv.take_string("name").as_deref(), Some("x y"));
        kv.finish().unwrap();
    }

    #[test]
    fn reports_problems() {
        assert_eq!(KvMap::parse("novalue\n").unwrap_err(), KvError::Syntax { line: 1 });
        assert!(matches!(KvMap::parse("a=1\na=2").unwrap_err(), KvError::Duplicate { line: 2, .. }));
        let mut kv = KvMap::parse("a = x\nb = 1").unwrap();
        let mut a = 0u32;
        assert!(matches!(kv.take("a", &mut a), Err(KvError::BadValue { .. })));
        assert_eq!(kv.finish(), Err(KvError::Unknown("b".into())));
    }
}
