//! Flat `key = value` configuration text.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Later assignments override earlier ones.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        KvConfig::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.assign(line).map_err(|_| {
                Error::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, found `{}`", raw.trim()),
                )
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected `key=value`"))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::config(assignment, "malformed key"));
        }
        self.entries.insert(k.to_string(), v.trim().to_string());
        Ok(())
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

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Accepts `true/false`, `yes/no`, `on/off`, `1/0`.
    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.entries.get(key).map(|v| v.to_ascii_lowercase()) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::config(key, format!("`{v}` is not a boolean"))),
            },
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c =
            KvConfig::parse("# header\nlambda = 0.5  # inline\n\nkernel=osd\nlambda = 0.25\n")
                .unwrap();
        assert_eq!(c.get::<f64>("lambda").unwrap(), Some(0.25));
        assert_eq!(c.get_str("kernel"), Some("osd"));
        c.assign("kernel=ews").unwrap();
        assert_eq!(c.get_str("kernel"), Some("ews"));
        assert_eq!(c.get_or("missing", 7usize).unwrap(), 7);
    }

    #[test]
    fn reports_bad_values_with_key() {
        let c = KvConfig::parse("epochs = many").unwrap();
        let err = c.get::<usize>("epochs").unwrap_err().to_string();
        assert!(err.contains("epochs"), "{err}");
        assert!(KvConfig::parse("just words").is_err());
        assert!(KvConfig::new().assign("=3").is_err());
    }

    #[test]
    fn lists_and_bools() {
        let c = KvConfig::parse("grid = 0, 0.5,1\nflag = yes\nbad = maybe").unwrap();
        assert_eq!(
            c.get_list::<f64>("grid").unwrap(),
            Some(vec![0.0, 0.5, 1.0])
        );
        assert!(c.get_bool("flag", false).unwrap());
        assert!(!c.get_bool("absent", false).unwrap());
        assert!(c.get_bool("bad", false).is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = KvConfig::parse("b = 2\na = 1").unwrap();
        assert_eq!(c.to_text(), "a = 1\nb = 2\n");
        assert_eq!(KvConfig::parse(&c.to_text()).unwrap(), c);
    }
}
