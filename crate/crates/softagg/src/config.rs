//! Config files and flag merging.
//!
//! A config file is a flat JSON object holding the subcommand's options and
//! optionally the global `seed`, `out` and `workers`. Flags given on the
//! command line override file values. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};
use crate::io::read_json;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

const GLOBAL_KEYS: [&str; 3] = ["seed", "out", "workers"];

fn non_null(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Overlays `flags` on `base` and deserializes into `T`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: Map<String, Value>, flags: &T) -> std::result::Result<T, String> {
    let mut merged = base;
    let flags = serde_json::to_value(flags).map_err(|e| e.to_string())?;
    merged.extend(non_null(flags));
    serde_json::from_value(Value::Object(merged)).map_err(|e| e.to_string())
}

/// Reads the optional config file and merges it under the flags.
pub fn resolve<T: Serialize + DeserializeOwned>(
    file: Option<&Path>,
    global_flags: &GlobalConfig,
    command_flags: &T,
) -> Result<(GlobalConfig, T)> {
    let mut base = match file {
        Some(path) => match read_json::<Value>(path)? {
            Value::Object(m) => m,
            _ => return Err(CliError::usage(format!("{}: config must be a JSON object", path.display()))),
        },
        None => Map::new(),
    };
    let mut global_base = Map::new();
    for key in GLOBAL_KEYS {
        if let Some(v) = base.remove(key) {
            global_base.insert(key.to_string(), v);
        }
    }
    let where_ = file.map_or_else(String::new, |p| format!("{}: ", p.display()));
    let global = overlay(global_base, global_flags).map_err(|e| CliError::usage(format!("{where_}{e}")))?;
    let command = overlay(base, command_flags).map_err(|e| CliError::usage(format!("{where_}{e}")))?;
    Ok((global, command))
}

/// Parses one grid value. Besides plain numbers this accepts a fractional
/// power of ten such as `1e4.5`.
fn parse_grid_value(token: &str) -> Option<f64> {
    if let Ok(x) = token.parse::<f64>() {
        return Some(x);
    }
    let (mantissa, exponent) = token.split_once(['e', 'E'])?;
    let m: f64 = mantissa.parse().ok()?;
    let e: f64 = exponent.parse().ok()?;
    Some(m * 10f64.powf(e))
}

fn is_ellipsis(token: &str) -> bool {
    token == "..." || token == "\u{2026}"
}

/// Parses a comma-separated list of sizes, e.g. `1e4,3e4,1e5` or
/// `1e4,1e4.5,...,1e6`. An ellipsis continues the geometric progression of
/// the two preceding values up to the following one, which must lie on it.
/// Values are rounded to integers and must be strictly increasing.
pub fn parse_size_grid(s: &str) -> std::result::Result<Vec<u64>, String> {
    let tokens: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    let mut values: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i];
        if is_ellipsis(t) {
            if values.len() < 2 || i + 1 >= tokens.len() || is_ellipsis(tokens[i + 1]) {
                return Err("an ellipsis needs two values before it and one after".into());
            }
            let end = parse_grid_value(tokens[i + 1]).ok_or_else(|| format!("not a number: {:?}", tokens[i + 1]))?;
            let (a, b) = (values[values.len() - 2], values[values.len() - 1]);
            if !(a > 0.0 && b > a) {
                return Err("an ellipsis needs increasing positive values before it".into());
            }
            let steps = (end / b).ln() / (b / a).ln();
            let k = steps.round();
            if k < 1.0 || (steps - k).abs() > 1e-6 {
                return Err(format!("{end} is not on the progression {a}, {b}, ..."));
            }
            let step = (b / a).ln();
            for j in 1..k as i64 {
                values.push(b * (step * j as f64).exp());
            }
            values.push(end);
            i += 2;
            continue;
        }
        values.push(parse_grid_value(t).ok_or_else(|| format!("not a number: {t:?}"))?);
        i += 1;
    }
    if values.is_empty() {
        return Err("empty grid".into());
    }
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        if !(v >= 1.0) || !v.is_finite() || v > u64::MAX as f64 {
            return Err(format!("grid values must be finite and >= 1, got {v}"));
        }
        let n = v.round() as u64;
        if out.last().is_some_and(|&last| n <= last) {
            return Err("grid values must be strictly increasing".into());
        }
        out.push(n);
    }
    Ok(out)
}

/// Comma-separated list of plain integers.
pub fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("not an integer: {t:?}")))
        .collect()
}
