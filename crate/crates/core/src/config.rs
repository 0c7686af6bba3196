//! Flat `key = value` text files used for run configs and checkpoint manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are kept sorted
//! so serialization is byte-stable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for KvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl std::error::Error for KvError {}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(KvError {
                    key: format!("line {}", i + 1),
                    message: format!("expected `key = value`, found {:?}", line),
                });
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError {
                    key: format!("line {}", i + 1),
                    message: "empty key".into(),
                });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>, KvError>
    where
        V::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|e: V::Err| KvError {
                key: key.to_string(),
                message: format!("cannot parse {:?}: {}", s, e),
            }),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V, KvError>
    where
        V::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V, KvError>
    where
        V::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| KvError {
            key: key.to_string(),
            message: "missing".into(),
        })
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>, KvError>
    where
        V::Err: fmt::Display,
    {
        let Some(s) = self.entries.get(key) else {
            return Ok(None);
        };
        if s.is_empty() {
            return Ok(Some(Vec::new()));
        }
        s.split(',')
            .map(|part| {
                part.trim().parse().map_err(|e: V::Err| KvError {
                    key: key.to_string(),
                    message: format!("cannot parse {:?}: {}", part, e),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Copies every entry of `other` over `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{} = {}", k, v)?;
        }
        Ok(())
    }
}

pub fn join_list<V: fmt::Display>(items: &[V]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# run\n seed = 7\n\nmodel.scale=1/8\n").unwrap();
        assert_eq!(kv.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(kv.get_str("model.scale"), Some("1/8"));
    }

    #[test]
    fn reports_bad_lines_and_values() {
        assert!(KeyValues::parse("seed 7").is_err());
        let kv = KeyValues::parse("seed = seven").unwrap();
        let err = kv.get::<u64>("seed").unwrap_err();
        assert_eq!(err.key, "seed");
    }

    #[test]
    fn display_round_trips() {
        let mut kv = KeyValues::new();
        kv.set("b", 2);
        kv.set("a", "x,y");
        let text = kv.to_string();
        assert_eq!(text, "a = x,y\nb = 2\n");
        assert_eq!(KeyValues::parse(&text).unwrap(), kv);
        assert_eq!(kv.get_list::<String>("a").unwrap().unwrap(), vec!["x", "y"]);
    }
}
