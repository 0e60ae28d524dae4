//! Minimal `key = value` config text format: one pair per line, `#` comments,
//! blank lines ignored. Shared by checkpoints and run configs.

use crate::error::{Result, WfnError};

/// Parses the text into ordered `(key, value)` pairs.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(WfnError::Parse(format!(
                "line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| WfnError::Parse(format!("key `{key}`: `{value}` is not a non-negative integer")))
}

pub fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| WfnError::Parse(format!("key `{key}`: `{value}` is not a u64")))
}

pub fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| WfnError::Parse(format!("key `{key}`: `{value}` is not a number")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(WfnError::Parse(format!("key `{key}`: `{value}` is not a boolean"))),
    }
}
