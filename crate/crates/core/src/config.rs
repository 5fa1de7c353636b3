//! Line-oriented `key = value` text used by every config file.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat; the
//! consumer decides whether a repeat appends or overrides.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Parses `value` for `key`, naming the key on failure.
pub fn value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(key, format!("`{value}`: {e}")))
}

pub fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown key `{key}`"))
}

/// Whitespace-separated fields of a list entry, exactly `n` of them.
pub fn fields<'a>(key: &str, value: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = value.split_whitespace().collect();
    if f.len() != n {
        return Err(Error::invalid(key, format!("expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let e = parse("# c\n\n a = 1 \nb=x y\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].key.as_str(), e[0].value.as_str(), e[0].line), ("a", "1", 3));
        assert_eq!(e[1].value, "x y");
    }

    #[test]
    fn rejects_missing_equals() {
        assert!(parse("nope").is_err());
    }

    #[test]
    fn value_names_key() {
        let err = value::<u32>("width", "abc").unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }
}
