//! Flat `key = value` configuration text.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are `[a-z0-9_]+` and may appear once. Values are trimmed strings,
//! typed later by whoever consumes them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse config text. Errors name the 1-based line.
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(Error::Config(format!("line {line_no}: invalid key `{k}`")));
            }
            if v.is_empty() {
                return Err(Error::Config(format!("line {line_no}: `{k}` has no value")));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{k}`")));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Set `key`, replacing any earlier value (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !valid_key(key) {
            return Err(Error::Config(format!("invalid key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Typed value of `key`, if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    /// Overwrite `slot` when `key` is present.
    pub fn read_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Keys not in `known`, sorted.
    pub fn unknown_keys<'a>(&'a self, known: &[&str]) -> Vec<&'a str> {
        self.entries
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Canonical text: sorted `key = value` lines. Parses back to the same map.
impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn comments_blank_lines_and_spacing() {
        let c = Config::parse("# defaults\n\nepochs = 200\n  learning_rate=0.001  # table value\nseed =7\n").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("epochs"), Some("200"));
        assert_eq!(c.get("learning_rate"), Some("0.001"));
        assert_eq!(c.parsed::<u64>("seed").unwrap(), Some(7));
        assert_eq!(c.parsed::<u64>("absent").unwrap(), None);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, needle) in [
            ("a = 1\nnot an assignment\n", "line 2"),
            ("a = 1\nb = 2\na = 3\n", "line 3: duplicate key `a`"),
            ("Bad-Key = 1\n", "line 1: invalid key"),
            ("\n\nk =   # nothing\n", "line 3: `k` has no value"),
        ] {
            let msg = Config::parse(text).unwrap_err().to_string();
            assert!(msg.contains(needle), "{msg:?} lacks {needle:?}");
        }
    }

    #[test]
    fn typed_errors_name_key_and_value() {
        let c = Config::parse("epochs = many\n").unwrap();
        let msg = c.parsed::<usize>("epochs").unwrap_err().to_string();
        assert!(msg.contains("`epochs` = `many`"), "{msg}");
    }

    #[test]
    fn overrides_win() {
        let mut c = Config::parse("epochs = 200\n").unwrap();
        c.set("epochs", "0").unwrap();
        let mut epochs = 5usize;
        c.read_into("epochs", &mut epochs).unwrap();
        assert_eq!(epochs, 0);
        assert!(c.set("no way", "1").is_err());
    }

    #[test]
    fn unknown_keys_are_listed() {
        let c = Config::parse("seed = 1\nepochz = 3\n").unwrap();
        assert_eq!(c.unknown_keys(&["seed", "epochs"]), vec!["epochz"]);
    }

    proptest! {
        #[test]
        fn display_round_trips(map in proptest::collection::btree_map("[a-z_][a-z0-9_]{0,8}", "[!-\"$-~]{1,12}", 0..8)) {
            let mut c = Config::new();
            for (k, v) in &map {
                c.set(k, v.clone()).unwrap();
            }
            let back = Config::parse(&c.to_string()).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn arbitrary_text_never_panics(s in "\\PC{0,200}") {
            let _ = Config::parse(&s);
        }
    }
}
