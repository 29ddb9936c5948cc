//! Run configuration: a JSON file layered over defaults, then `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use viewgrid_core::losses::LossWeights;
use viewgrid_core::model::ModelConfig;
use viewgrid_core::synthdata::DatasetConfig;
use viewgrid_core::trainer::{Experiment, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synthdata: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    /// Read samples from this dataset file instead of generating them.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn experiment(&self) -> Experiment {
        Experiment {
            synthdata: self.synthdata.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            loss: self.loss,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment().validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Defaults, overlaid with `file` if given, then with each `key=value` override.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = Self::default().to_value();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            let user: Value =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
            merge(&mut tree, user, "")?;
        }
        for o in overrides {
            let (key, raw) =
                o.split_once('=').ok_or_else(|| ConfigError(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set(&mut tree, key, value)?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn check_type(key: &str, old: &Value, new: &Value) -> Result<(), ConfigError> {
    let ok = match old {
        Value::Null => true,
        Value::Bool(_) => new.is_boolean(),
        Value::Number(_) => new.is_number(),
        Value::String(_) => new.is_string(),
        Value::Array(_) => new.is_array(),
        Value::Object(_) => new.is_object(),
    };
    if ok {
        Ok(())
    } else {
        Err(ConfigError(format!("{key}: expected {}, got {new}", kind(old))))
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn merge(base: &mut Value, user: Value, prefix: &str) -> Result<(), ConfigError> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let key = join(prefix, &k);
                let slot = b.get_mut(&k).ok_or_else(|| ConfigError(format!("unknown config key {key}")))?;
                if slot.is_object() {
                    check_type(&key, slot, &v)?;
                    merge(slot, v, &key)?;
                } else {
                    check_type(&key, slot, &v)?;
                    *slot = v;
                }
            }
            Ok(())
        }
        (b, u) => {
            check_type(prefix, b, &u)?;
            *b = u;
            Ok(())
        }
    }
}

fn set(tree: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| ConfigError(format!("unknown config key {key}")))?;
    }
    check_type(key, node, &value)?;
    *node = value;
    Ok(())
}
