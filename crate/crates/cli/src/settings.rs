//! Option resolution: command-line flag, then the user's `--config` file,
//! then a bundled preset, then the built-in default.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::Failure;

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "seed",
    "parallel",
    "out",
    "test_fraction",
    "model",
    "k",
    "alpha",
    "restarts",
    "tau",
    "sigma",
    "masks",
    "max_mask",
    "strategy",
    "budget",
    "trials",
    "temperature",
    "max_budget",
    "arms",
    "strategies",
    "independent_branch_seeds",
    "budgets",
    "max_episodes",
    "learner_seeds",
    "adaptivity_budget",
];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    layers: Vec<Map<String, Value>>,
}

fn parse_layer(text: &str, origin: &str) -> Result<Map<String, Value>, Failure> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Failure::Usage(format!("{origin}: not valid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(Failure::Usage(format!("{origin}: expected a JSON object")));
    };
    if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(Failure::Usage(format!("{origin}: unknown option {k:?}")));
    }
    Ok(map)
}

impl Settings {
    /// Layers in decreasing precedence: the user file, then `preset`.
    pub fn load(user: Option<&Path>, preset: Option<&str>) -> Result<Self, Failure> {
        let mut layers = Vec::new();
        if let Some(path) = user {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            layers.push(parse_layer(&text, &path.display().to_string())?);
        }
        if let Some(text) = preset {
            layers.push(parse_layer(text, "bundled preset")?);
        }
        Ok(Self { layers })
    }

    pub fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure> {
        if flag.is_some() {
            return Ok(flag);
        }
        for layer in &self.layers {
            if let Some(v) = layer.get(key) {
                return serde_json::from_value(v.clone())
                    .map(Some)
                    .map_err(|e| Failure::Usage(format!("config option {key:?}: {e}")));
            }
        }
        Ok(None)
    }

    pub fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }
}
