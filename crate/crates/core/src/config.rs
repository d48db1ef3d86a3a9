//! Flat JSON run configuration covering the model, the synthetic data
//! generator and the data paths.
//!
//! Every key lives in one flat object. The generator's seed is spelled
//! `data_seed` so that `seed` always means the model seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evalkit::BurstConfig;
use crate::labeler::{LabelScheme, ModelConfig};
use crate::synth::SynthConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub dev_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Minimum training-set frequency for a word to enter the vocabulary.
    pub min_count: usize,
    pub burst_threshold: f64,
    pub burst_window: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let burst = BurstConfig::default();
        DataConfig {
            train_dir: None,
            dev_dir: None,
            test_dir: None,
            out_dir: None,
            min_count: 1,
            burst_threshold: burst.threshold,
            burst_window: burst.window,
        }
    }
}

impl DataConfig {
    pub fn burst(&self) -> BurstConfig {
        BurstConfig {
            threshold: self.burst_threshold,
            window: self.burst_window,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
}

const DATA_SEED: &str = "data_seed";

fn object<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("config structs serialize") {
        Value::Object(m) => m,
        _ => unreachable!("config structs serialize to objects"),
    }
}

impl RunConfig {
    /// Flat JSON object with every key materialized, in sorted key order.
    pub fn to_json(&self) -> Value {
        let mut out = object(&self.model);
        for (k, v) in object(&self.synth) {
            let k = if k == "seed" {
                DATA_SEED.to_string()
            } else {
                k
            };
            out.insert(k, v);
        }
        out.extend(object(&self.data));
        Value::Object(out)
    }

    /// Parses a flat object; missing keys take defaults, unknown keys are
    /// rejected.
    pub fn from_json(value: Value) -> Result<Self> {
        let Value::Object(map) = value else {
            return Err(Error::config("run config must be a JSON object"));
        };
        let defaults = RunConfig::default();
        let model_keys = object(&defaults.model);
        let synth_keys = object(&defaults.synth);
        let data_keys = object(&defaults.data);
        let (mut model, mut synth, mut data) = (Map::new(), Map::new(), Map::new());
        for (k, v) in map {
            if k == DATA_SEED {
                synth.insert("seed".into(), v);
            } else if model_keys.contains_key(&k) {
                model.insert(k, v);
            } else if synth_keys.contains_key(&k) && k != "seed" {
                synth.insert(k, v);
            } else if data_keys.contains_key(&k) {
                data.insert(k, v);
            } else {
                return Err(Error::config(format!("unknown config key `{k}`")));
            }
        }
        Ok(RunConfig {
            model: part(model)?,
            synth: part(synth)?,
            data: part(data)?,
        })
    }
}

fn part<T: serde::de::DeserializeOwned>(m: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(m)).map_err(|e| Error::config(e.to_string()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_json(value)
    }

    /// Applies `key=value`; the value is read as JSON when it parses as
    /// JSON and as a plain string otherwise.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let Value::Object(mut map) = self.to_json() else {
            unreachable!()
        };
        if !map.contains_key(key) {
            return Err(Error::config(format!("unknown config key `{key}`")));
        }
        map.insert(key.to_string(), value);
        *self = Self::from_json(Value::Object(map))?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<LabelScheme> {
        self.synth.scheme()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        if self.data.burst_threshold.is_nan() || self.data.burst_threshold <= 0.0 {
            return Err(Error::config("burst_threshold must be positive"));
        }
        Ok(())
    }

    /// Writes the fully resolved config as pretty JSON into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(&self.to_json())?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
