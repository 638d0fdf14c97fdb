//! Flat `key=value` text format shared by parameter files, sidecars and
//! experiment configs. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "line {}: expected key=value, got `{line}`",
                    lineno + 1
                ))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_list(&mut self, key: &str, values: &[f64]) {
        let s: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.entries.insert(key.to_string(), s.join(","));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("key `{key}`: cannot parse `{raw}`")))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        if self.contains(key) {
            self.get(key)
        } else {
            Ok(default)
        }
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("key `{key}`: cannot parse `{s}`")))
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let m = KvMap::parse("# c\n a = 1 \n\nb=x,y\nf=0.1,2.5\n").unwrap();
        assert_eq!(m.get::<i32>("a").unwrap(), 1);
        assert_eq!(m.raw("b"), Some("x,y"));
        assert_eq!(m.get_list("f").unwrap(), vec![0.1, 2.5]);
        assert_eq!(KvMap::parse(&m.render()).unwrap(), m);
        assert!(KvMap::parse("novalue").is_err());
        assert!(m.get::<f64>("b").is_err());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut m = KvMap::new();
        let v = [0.1 + 0.2, -1e-300, std::f64::consts::PI];
        m.set_list("v", &v);
        let back = KvMap::parse(&m.render()).unwrap().get_list("v").unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
