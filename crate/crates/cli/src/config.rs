//! Run configuration: one JSON document, optionally overridden key by key.

use std::path::Path;

use anyhow::Context;
use hardpix::losses::LossConfig;
use hardpix::synthdata::{SceneSpec, BENCHMARK_TEST, BENCHMARK_TRAIN};
use hardpix::tinynet::{NetSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::exit::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneSpec,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scene: SceneSpec::default(),
            n_train: BENCHMARK_TRAIN,
            n_test: BENCHMARK_TEST,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds parameter initialization and the training shuffle. The scene
    /// generator has its own seed under `data.scene.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub net: NetSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub correlation_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            net: NetSpec::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            correlation_bins: 10,
        }
    }
}

impl RunConfig {
    /// Copies the run seed and class count into the sections that use them.
    pub fn resolved(mut self) -> Self {
        self.net.init_seed = self.seed;
        self.train.seed = self.seed;
        self.net.classes = self.data.scene.classes;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |e: hardpix::Error| CliError::Config(e.to_string());
        self.data.scene.validate().map_err(field)?;
        self.net.validate().map_err(field)?;
        self.loss
            .validate()
            .map_err(|e| CliError::Config(format!("loss: {e}")))?;
        self.train.validate().map_err(field)?;
        if self.correlation_bins < 2 {
            return Err(CliError::Config(
                "correlation_bins: need at least 2 bins".into(),
            ));
        }
        if !self
            .data
            .scene
            .height
            .is_multiple_of(hardpix::tinynet::SIZE_MULTIPLE)
            || !self
                .data
                .scene
                .width
                .is_multiple_of(hardpix::tinynet::SIZE_MULTIPLE)
        {
            return Err(CliError::Config(format!(
                "data.scene: height and width must be multiples of {}",
                hardpix::tinynet::SIZE_MULTIPLE
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

pub fn hash_json(value: &Value) -> String {
    let bytes = serde_json::to_vec(value).expect("JSON value serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Sets `path` (dot separated) in a JSON object, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("{path}: empty path segment")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{}: not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

/// Parses `key.path=value`; the value is JSON when it parses as JSON and a
/// plain string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok((key.trim().to_owned(), value))
}

/// Defaults, then the file, then each override in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::from_io(path, e))
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, file);
    }
    for o in overrides {
        let (key, v) = parse_override(o)?;
        set_path(&mut value, &key, v)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
