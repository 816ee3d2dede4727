//! Run configuration: one JSON document drives every subcommand. Unknown
//! keys are rejected; omitted sections fall back to desk-scale defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xfcsi_core::baselines::PilotConfig;
use xfcsi_core::flow::TrainConfig;
use xfcsi_core::scene::{ArrayConfig, SceneConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    /// Integration steps for inference.
    pub k: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { k: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_sweep_db: Vec<f64>,
    pub tca_sweep_ms: Vec<f64>,
    /// Flow integration steps paired with each acquisition-period point.
    pub k_for_tca: Vec<usize>,
    pub bandwidth_hz: f64,
    pub gps_bits: f64,
    pub knn_k: usize,
    /// Grid searched for the LASSO weight on held-out training samples.
    pub lasso_grid: Vec<f64>,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
    pub lasso_validation_samples: usize,
    pub methods: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_sweep_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            tca_sweep_ms: vec![1.25, 1.5, 2.0, 2.5],
            k_for_tca: vec![2, 3, 5, 7],
            bandwidth_hz: 120_000.0,
            gps_bits: 128.0,
            knn_k: 5,
            lasso_grid: vec![0.001, 0.00316, 0.01, 0.0316, 0.1, 0.316, 1.0],
            lasso_max_iter: 300,
            lasso_tol: 1e-9,
            lasso_validation_samples: 32,
            methods: vec!["flow".into(), "ls".into(), "lasso".into(), "knn".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub ckpt_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub arrays: ArrayConfig,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub pilots: PilotConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

/// Config-level failures carry the offending key path where available.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("invalid override '{0}': expected key.path=value")]
    Override(String),
}

/// Load a config file, apply `--set key.path=value` overrides, and validate
/// against the schema (unknown keys rejected).
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Schema(e.to_string()))?
        }
        None => serde_json::json!({}),
    };

    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(item.clone()))?;
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
        let segments: Vec<&str> = key.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(ConfigError::Override(item.clone()));
        }
        set_path(&mut value, &segments, parsed).map_err(|_| ConfigError::Override(item.clone()))?;
    }

    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Schema(e.to_string()))?;
    validate(&config).map_err(|e| ConfigError::Schema(e.to_string()))?;
    Ok(config)
}

fn set_path(
    value: &mut serde_json::Value,
    segments: &[&str],
    parsed: serde_json::Value,
) -> std::result::Result<(), ()> {
    let obj = value.as_object_mut().ok_or(())?;
    if segments.len() == 1 {
        obj.insert(segments[0].to_string(), parsed);
        Ok(())
    } else {
        let child = obj
            .entry(segments[0].to_string())
            .or_insert_with(|| serde_json::json!({}));
        set_path(child, &segments[1..], parsed)
    }
}

fn validate(c: &RunConfig) -> xfcsi_core::Result<()> {
    c.arrays.validate()?;
    c.scene.validate()?;
    c.train.validate()?;
    c.pilots.validate()?;
    if c.infer.k == 0 {
        return Err(xfcsi_core::Error::Config("infer.k must be >= 1".into()));
    }
    if c.eval.k_for_tca.len() != c.eval.tca_sweep_ms.len() {
        return Err(xfcsi_core::Error::Config(
            "eval.k_for_tca must pair with eval.tca_sweep_ms".into(),
        ));
    }
    if c.eval.methods.is_empty() {
        return Err(xfcsi_core::Error::Config("eval.methods must not be empty".into()));
    }
    Ok(())
}
