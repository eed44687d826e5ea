//! Flat `key=value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! consumed by the caller; leftovers are reported as unknown.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{HasError, Result};

#[derive(Debug, Default)]
pub struct KeyValues {
    values: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(HasError::Config(format!(
                    "line {}: expected key=value",
                    n + 1
                )));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(HasError::Config(format!("line {}: empty key", n + 1)));
            }
            if values
                .insert(key.clone(), (n + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(HasError::Config(format!(
                    "line {}: duplicate key {key}",
                    n + 1
                )));
            }
        }
        Ok(KeyValues { values })
    }

    /// Removes and parses `key`, falling back to `default` when absent.
    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.values.remove(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| {
                HasError::Config(format!("line {line}: invalid value {v:?} for {key}"))
            }),
        }
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.values.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(HasError::Config(format!("line {line}: unknown key {k}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let mut kv = KeyValues::parse("# c\n a = 3 \n\nb=x\n").unwrap();
        assert_eq!(kv.take_or("a", 0u32).unwrap(), 3);
        assert_eq!(kv.take_or("z", 9u32).unwrap(), 9);
        assert!(kv.take_or::<u32>("b", 0).is_err());
        kv.finish().unwrap();

        let kv = KeyValues::parse("a=1\nq=2").unwrap();
        assert!(kv.finish().is_err());
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
    }
}
