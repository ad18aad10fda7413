//! Run settings: command-line flags layered over a config file, over the seed
//! environment variable, over built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Failure;

pub const SEED_ENV: &str = "CURVE_EQUIV_SEED";

/// Every configurable value. `None` means "not given at this layer".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub model1: Option<String>,
    pub model2: Option<String>,
    /// `lo:hi,lo:hi,...`
    pub box1: Option<String>,
    pub box2: Option<String>,
    /// `lo,hi`; defaults to the observed dose range.
    pub domain: Option<String>,
    pub method: Option<String>,
    pub eps: Option<f64>,
    pub alpha: Option<f64>,
    pub replicates: Option<usize>,
    pub draws: Option<usize>,
    pub c: Option<f64>,
    pub sn_rule: Option<String>,
    pub generation: Option<String>,
    pub two_sided: Option<bool>,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub d1: Option<f64>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub reps: Option<usize>,
    pub measure: Option<String>,
    pub grid: Option<String>,
    pub summary: Option<PathBuf>,
}

impl Settings {
    /// Fields set in `top` replace those in `self`.
    pub fn overlay(self, top: Settings) -> Result<Settings, Failure> {
        let mut base = to_map(&self)?;
        for (key, value) in to_map(&top)? {
            if !value.is_null() {
                base.insert(key, value);
            }
        }
        serde_json::from_value(Value::Object(base)).map_err(|e| Failure::Input(e.to_string()))
    }
}

fn to_map(s: &Settings) -> Result<Map<String, Value>, Failure> {
    match serde_json::to_value(s) {
        Ok(Value::Object(map)) => Ok(map),
        _ => Err(Failure::Input("settings are not a JSON object".into())),
    }
}

/// Reads a JSON object or `key = value` lines. A JSON report is accepted too:
/// its `config` member is used.
pub fn load_config(path: &Path) -> Result<Settings, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
    let value = if text.trim_start().starts_with('{') {
        let mut v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Input(format!("malformed config {}: {e}", path.display())))?;
        if v.get("command").is_some() {
            v.get_mut("config").map(Value::take).unwrap_or(v)
        } else {
            v
        }
    } else {
        Value::Object(parse_key_values(&text)?)
    };
    serde_json::from_value(value).map_err(|e| Failure::Input(format!("malformed config {}: {e}", path.display())))
}

fn parse_key_values(text: &str) -> Result<Map<String, Value>, Failure> {
    let mut map = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        let parsed = if let Ok(u) = value.parse::<u64>() {
            Value::from(u)
        } else if let Ok(f) = value.parse::<f64>() {
            Value::from(f)
        } else if let Ok(b) = value.parse::<bool>() {
            Value::from(b)
        } else {
            Value::from(value)
        };
        map.insert(key, parsed);
    }
    Ok(map)
}

/// The seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Input(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

pub fn parse_pair(text: &str, what: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<&str> = text.split([',', ':']).map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(Failure::Input(format!("invalid {what} '{text}'"))),
        },
        _ => Err(Failure::Input(format!("{what} needs two numbers, got '{text}'"))),
    }
}

/// `lo:hi,lo:hi,...` into per-parameter bounds.
pub fn parse_box(text: &str) -> Result<Vec<(f64, f64)>, Failure> {
    text.split(',')
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Failure::Input(format!("box entries are lo:hi, got '{part}'")))?;
            match (a.trim().parse(), b.trim().parse()) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                _ => Err(Failure::Input(format!("invalid box entry '{part}'"))),
            }
        })
        .collect()
}

pub fn parse_list(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|v| v.trim().parse().map_err(|_| Failure::Input(format!("invalid number '{v}' in '{text}'"))))
        .collect()
}
