use std::path::Path;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Audit record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// serde_json's default map is ordered by key, so re-serializing a `Value`
/// gives one canonical text regardless of the input key order.
pub fn canonical_json(config: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), sorted(v))).collect()),
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(config).to_string()
}

pub fn digest(config: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(config).as_bytes()))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: u64, started_at: String) -> Self {
        let config_digest = digest(&config);
        Self {
            command: command.to_string(),
            config,
            config_digest,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            finished_at: String::new(),
            inputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        let d = file_digest(path)?;
        self.inputs.push((path.display().to_string(), d));
        Ok(self)
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_at = now();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": null}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": {"x": null, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(digest(&a), digest(&b));
        let c: Value = serde_json::from_str(r#"{"a": {"x": null, "y": [2, 1]}, "b": 1}"#).unwrap();
        assert_ne!(digest(&a), digest(&c));
    }
}
