//! Experiment configuration files.
//!
//! A config is one JSON object. `protocols` and `seeds` are required; every
//! simulation key is optional and falls back to [`SimSettings::default`].
//! An optional `preset` names a base layer (see [`super::presets`]) that the
//! file's own keys override. Nested objects merge key by key, so
//! `{"hyperparameters": {"eta_i": 0.01}}` changes only that rate.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::presets;
use crate::error::{Error, Result};
use crate::sim::{Protocol, SimSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
    /// Absolute accuracy thresholds for time-to-target.
    #[serde(default)]
    pub targets: Vec<f64>,
    /// Thresholds as fractions of the centralized-training accuracy ceiling.
    #[serde(default)]
    pub ceiling_fractions: Vec<f64>,
    #[serde(flatten)]
    pub settings: SimSettings,
}

impl ExperimentConfig {
    pub fn new(protocols: Vec<Protocol>, seeds: Vec<u64>, settings: SimSettings) -> Self {
        ExperimentConfig {
            protocols,
            seeds,
            targets: Vec::new(),
            ceiling_fractions: Vec::new(),
            settings,
        }
    }

    /// All violated constraints, each prefixed with its key path.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.protocols.is_empty() {
            out.push("protocols: must list at least one protocol".to_string());
        }
        if self.seeds.is_empty() {
            out.push("seeds: must list at least one seed".to_string());
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(*t > 0.0 && *t <= 1.0) {
                out.push(format!("targets[{i}]: must lie in (0, 1], got {t}"));
            }
        }
        for (i, f) in self.ceiling_fractions.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) {
                out.push(format!("ceiling_fractions[{i}]: must lie in (0, 1], got {f}"));
            }
        }
        out.extend(self.settings.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Pretty JSON that [`parse_config_str`] reads back to an equal config.
    pub fn emit(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let user: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("<root>: malformed JSON: {e}")]))?;
    parse_config_value(user)
}

pub fn parse_config_value(user: Value) -> Result<ExperimentConfig> {
    let Value::Object(mut user) = user else {
        return Err(Error::Config(vec!["<root>: must be a JSON object".into()]));
    };
    let mut layered = match user.remove("preset") {
        None => Map::new(),
        Some(Value::String(name)) => match presets::preset(&name)? {
            Value::Object(m) => m,
            _ => unreachable!("presets are objects"),
        },
        Some(other) => return Err(Error::Config(vec![format!("preset: expected a name, got {other}")])),
    };
    merge(&mut layered, user);

    let reference = reference_value()?;
    let mut problems = Vec::new();
    unknown_keys(&layered, &reference, "", &mut problems);
    for key in ["protocols", "seeds"] {
        if !layered.contains_key(key) {
            problems.push(format!("{key}: missing required key"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let Value::Object(mut full) = reference else {
        unreachable!("reference is an object")
    };
    merge(&mut full, layered);
    // Deserialized in two halves: a flattened struct would lose error paths.
    let mut head = Map::new();
    for key in HEAD_KEYS {
        if let Some(v) = full.remove(key) {
            head.insert(key.to_string(), v);
        }
    }
    let head: Head = with_path(Value::Object(head))?;
    let settings: SimSettings = with_path(Value::Object(full))?;
    let cfg = ExperimentConfig {
        protocols: head.protocols,
        seeds: head.seeds,
        targets: head.targets,
        ceiling_fractions: head.ceiling_fractions,
        settings,
    };
    cfg.validate()?;
    Ok(cfg)
}

const HEAD_KEYS: [&str; 4] = ["protocols", "seeds", "targets", "ceiling_fractions"];

#[derive(Deserialize)]
struct Head {
    protocols: Vec<Protocol>,
    seeds: Vec<u64>,
    targets: Vec<f64>,
    ceiling_fractions: Vec<f64>,
}

fn with_path<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(vec![format!("{path}: {}", e.into_inner())])
    })
}

/// Defaults for every key, used both as the base layer and as the schema for
/// unknown-key detection.
fn reference_value() -> Result<Value> {
    Ok(serde_json::to_value(ExperimentConfig::new(
        Vec::new(),
        Vec::new(),
        SimSettings::default(),
    ))?)
}

/// Overlays `top` onto `base`, recursing into objects present in both.
fn merge(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn unknown_keys(given: &Map<String, Value>, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(reference) = reference else {
        return;
    };
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match reference.get(k) {
            None => out.push(format!("{path}: unknown key")),
            Some(r) => {
                if let Value::Object(inner) = v {
                    unknown_keys(inner, r, &path, out);
                }
            }
        }
    }
}
