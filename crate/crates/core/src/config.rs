//! Flat key-value config files (TOML syntax) with unknown-key rejection.

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Parse `text` into `T`, mapping failures to [`Error::BadConfig`] naming the key.
pub fn parse_flat<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = backticked(&msg)
            .or_else(|| e.span().and_then(|s| key_at(text, s.start)))
            .unwrap_or_else(|| "<document>".to_string());
        Error::BadConfig { key, msg }
    })
}

pub fn read_flat<T: DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_flat(&text)
}

fn backticked(msg: &str) -> Option<String> {
    if !msg.starts_with("unknown field") && !msg.starts_with("missing field") && !msg.starts_with("duplicate") {
        return None;
    }
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

fn key_at(text: &str, offset: usize) -> Option<String> {
    let line_start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    (!key.is_empty()).then(|| key.to_string())
}

pub(crate) fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::BadConfig { key: key.to_string(), msg: msg.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Demo {
        #[serde(default)]
        alpha: f64,
        beta: Vec<usize>,
    }

    #[test]
    fn parses_and_rejects() {
        let d: Demo = parse_flat("alpha = 0.5\nbeta = [1, 2]\n").unwrap();
        assert_eq!(d, Demo { alpha: 0.5, beta: vec![1, 2] });

        match parse_flat::<Demo>("alhpa = 0.5\nbeta = [1]\n") {
            Err(Error::BadConfig { key, .. }) => assert_eq!(key, "alhpa"),
            other => panic!("{other:?}"),
        }
        match parse_flat::<Demo>("beta = [1]\nalpha = \"x\"\n") {
            Err(Error::BadConfig { key, .. }) => assert_eq!(key, "alpha"),
            other => panic!("{other:?}"),
        }
        match parse_flat::<Demo>("alpha = 1.0\n") {
            Err(Error::BadConfig { key, .. }) => assert_eq!(key, "beta"),
            other => panic!("{other:?}"),
        }
    }
}
