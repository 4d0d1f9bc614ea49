//! Optional run configuration: flat `key = value` lines or a flat JSON object.
//! Every value is kept as text and parsed at lookup, so both formats go
//! through the same conversions as the command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Keys accepted in a config file.
pub const KEYS: &[&str] = &[
    "setting",
    "dist",
    "n",
    "p",
    "reps",
    "seed",
    "out",
    "workers",
    "methods",
    "method",
    "table",
    "rows",
    "data",
    "r0",
    "level",
    "bootstrap_size",
    "gate",
    "coefficients",
    "bins",
    "lo",
    "hi",
    "grid_points",
    "schema_version",
];

#[derive(Debug, Default, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let values = if text.trim_start().starts_with('{') {
            parse_json(text)?
        } else {
            parse_lines(text)?
        };
        for key in values.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("unknown config key '{key}'")));
            }
        }
        Ok(Self { values })
    }

    /// `flag`, else the config value under `key`, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::Usage(format!("config key '{key}': cannot parse '{raw}': {e}"))
            }),
        }
    }
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key = value", i + 1)));
        };
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key '{key}'", i + 1)));
        }
    }
    Ok(out)
}

fn parse_json(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(CliError::Usage("JSON config must be an object".into()));
    };
    let mut out = BTreeMap::new();
    for (k, v) in map {
        let text = match v {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            // method lists may be written as arrays
            serde_json::Value::Array(items) => items
                .iter()
                .map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string()))
                .collect::<Vec<_>>()
                .join(","),
            other => {
                return Err(CliError::Usage(format!("config key '{k}': unsupported value {other}")))
            }
        };
        out.insert(k.replace('-', "_"), text);
    }
    Ok(out)
}
