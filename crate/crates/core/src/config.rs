//! Run configuration: one JSON document holding the training, probe, and
//! dataset settings, with environment-variable overrides and a strict
//! unknown-key policy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{LinearProbeConfig, ProbeConfig};
use crate::image::TransformKind;
use crate::trainer::TrainConfig;

/// Environment prefix: `EQUILEARN_TRAIN__LAMBDA=0.5` overrides
/// `train.lambda`; `__` separates nesting levels.
pub const ENV_PREFIX: &str = "EQUILEARN_";

/// Grid specification for sweeps; empty lists mean "use the base value".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambda: Vec<f64>,
    pub d_equi: Vec<usize>,
    pub intermediates: Vec<usize>,
    pub transform: Vec<String>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
            && self.d_equi.is_empty()
            && self.intermediates.is_empty()
            && self.transform.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: String,
    pub dataset_path: String,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub linear_probe: LinearProbeConfig,
    /// Transformation kinds evaluated by `eval-equiv` and `sweep`.
    pub eval_kinds: Vec<String>,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: "runs/out".to_string(),
            dataset_path: String::new(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            linear_probe: LinearProbeConfig::default(),
            eval_kinds: vec![
                "rotation".to_string(),
                "color".to_string(),
                "blur".to_string(),
                "translation".to_string(),
            ],
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Validate everything that does not need the dataset on disk.
    pub fn validate(&self) -> Result<()> {
        if self.dataset_path.is_empty() {
            return Err(Error::Config(
                "dataset_path is required but missing or empty".to_string(),
            ));
        }
        if self.out_dir.is_empty() {
            return Err(Error::Config("out_dir must not be empty".to_string()));
        }
        self.train.validate()?;
        self.probe.validate()?;
        for k in &self.eval_kinds {
            TransformKind::parse(k)?;
        }
        for t in &self.sweep.transform {
            crate::trainer::TransformChoice::parse(t)?;
        }
        Ok(())
    }

    pub fn parsed_eval_kinds(&self) -> Result<Vec<TransformKind>> {
        self.eval_kinds.iter().map(|k| TransformKind::parse(k)).collect()
    }
}

fn set_json_path(root: &mut serde_json::Value, path: &[&str], value: serde_json::Value) {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        if i == path.len() - 1 {
            if let serde_json::Value::Object(map) = node {
                map.insert(key.to_string(), value);
            }
            return;
        }
        if !node.is_object() {
            return;
        }
        let map = node.as_object_mut().unwrap();
        node = map
            .entry(key.to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
}

/// Apply `EQUILEARN_`-prefixed variables onto a JSON config value. Values
/// parse as JSON when possible (numbers, booleans, arrays) and fall back to
/// plain strings.
pub fn apply_env_overrides<I>(config: &mut serde_json::Value, vars: I)
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut overrides: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_string(), v)))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
        let path_refs: Vec<&str> = path.iter().map(|s| s.as_str()).collect();
        let value = serde_json::from_str(&raw).unwrap_or(serde_json::Value::String(raw));
        set_json_path(config, &path_refs, value);
    }
}

/// Load a run config from disk, apply process-environment overrides, reject
/// unknown keys, and validate.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    apply_env_overrides(&mut value, std::env::vars());
    let cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    Ok(cfg)
}

/// Serialize the effective (post-default, post-override) config into the
/// run directory so the run is reproducible from its outputs alone.
pub fn write_config_echo(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    Ok(())
}
