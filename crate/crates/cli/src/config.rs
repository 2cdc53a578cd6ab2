//! Per-command configuration: a JSON file whose keys mirror the command's
//! long flags (in snake_case), with explicit flags taking precedence.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Overlays the flags that were given on top of the config file.
///
/// A flag counts as given when it serializes to something other than `null`
/// or an empty list.
pub fn resolve<T: Serialize + DeserializeOwned>(file: Option<&Path>, flags: &T) -> Result<T> {
    let mut merged = match file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
                Value::Object(map) => map,
                _ => bail!("config {} must hold a JSON object", path.display()),
            }
        }
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        bail!("command flags did not serialize to an object");
    };
    for (key, value) in given {
        let empty = match &value {
            Value::Null => true,
            Value::Array(items) => items.is_empty(),
            _ => false,
        };
        if !empty {
            merged.insert(key, value);
        }
    }
    let source = file.map_or_else(|| "flags".to_string(), |p| p.display().to_string());
    serde_json::from_value(Value::Object(merged)).with_context(|| format!("invalid configuration in {source}"))
}

/// Unwraps an option that must come from a flag or the config file.
pub fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("missing --{flag} (pass the flag or set `{}` in --config)", flag.replace('-', "_")))
}

/// Parses an enum by its serialized name.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}
