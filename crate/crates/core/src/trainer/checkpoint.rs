//! Checkpoints: a JSON manifest naming every tensor (shape, byte range,
//! role) next to a little-endian float32 blob. Save/load round trips are
//! bitwise; loads validate everything before touching the training state.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::TensorData;

use super::{TrainConfig, TrainState};

const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorRole {
    Param,
    OptM,
    OptV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len_bytes: usize,
    role: TensorRole,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    step: usize,
    opt_t: usize,
    train_config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

fn push_tensor(
    blob: &mut Vec<u8>,
    entries: &mut Vec<TensorEntry>,
    name: &str,
    value: &TensorData<f32>,
    role: TensorRole,
) {
    let offset = blob.len();
    for v in &value.data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    entries.push(TensorEntry {
        name: name.to_string(),
        shape: value.shape.clone(),
        offset,
        len_bytes: blob.len() - offset,
        role,
    });
}

/// Write `manifest.json` + `params.bin` into `dir` (created if needed).
pub fn save_checkpoint(dir: &Path, state: &TrainState) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let params = &state.model.params;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, value) in params.names.iter().zip(params.values.iter()) {
        push_tensor(&mut blob, &mut entries, name, value, TensorRole::Param);
    }
    for (name, value) in params.names.iter().zip(state.opt.m.iter()) {
        push_tensor(&mut blob, &mut entries, name, value, TensorRole::OptM);
    }
    for (name, value) in params.names.iter().zip(state.opt.v.iter()) {
        push_tensor(&mut blob, &mut entries, name, value, TensorRole::OptV);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        step: state.step,
        opt_t: state.opt.t,
        train_config: state.cfg.clone(),
        tensors: entries,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(dir.to_path_buf())
}

/// A fully validated checkpoint, not yet bound to a model.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub train_config: TrainConfig,
    pub step: usize,
    pub opt_t: usize,
    pub params: ParamSet<f32>,
    pub opt_m: Vec<TensorData<f32>>,
    pub opt_v: Vec<TensorData<f32>>,
}

impl LoadedCheckpoint {
    /// Move the loaded tensors into a freshly initialized state, validating
    /// that every name and shape matches the model built from the config.
    pub fn install(self, state: &mut TrainState) -> Result<()> {
        let expect = &state.model.params;
        if self.params.names != expect.names {
            return Err(Error::Checkpoint(
                "checkpoint parameter names do not match the model".to_string(),
            ));
        }
        for ((name, have), want) in self
            .params
            .names
            .iter()
            .zip(self.params.values.iter())
            .zip(expect.values.iter())
        {
            if have.shape != want.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?} but the model expects {:?}",
                    have.shape, want.shape
                )));
            }
        }
        state.model.params = self.params;
        state.opt.m = self.opt_m;
        state.opt.v = self.opt_v;
        state.opt.t = self.opt_t;
        state.step = self.step;
        Ok(())
    }
}

fn decode_tensor(blob: &[u8], entry: &TensorEntry) -> Result<TensorData<f32>> {
    let numel: usize = entry.shape.iter().product();
    if entry.len_bytes != numel * 4 {
        return Err(Error::Checkpoint(format!(
            "tensor '{}': manifest shape {:?} needs {} bytes but entry spans {}",
            entry.name,
            entry.shape,
            numel * 4,
            entry.len_bytes
        )));
    }
    let end = entry.offset.checked_add(entry.len_bytes).filter(|&e| e <= blob.len());
    let end = end.ok_or_else(|| {
        Error::Checkpoint(format!(
            "tensor '{}': byte range {}..{} exceeds blob length {} (truncated or corrupt blob)",
            entry.name,
            entry.offset,
            entry.offset + entry.len_bytes,
            blob.len()
        ))
    })?;
    let bytes = &blob[entry.offset..end];
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(TensorData::new(entry.shape.clone(), data))
}

/// Read and validate a checkpoint directory. Nothing is returned unless the
/// whole blob decodes cleanly: no partial loads.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest_bytes = std::fs::read(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Checkpoint(format!("cannot read manifest in {}: {e}", dir.display())))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = std::fs::read(dir.join(BLOB_FILE))
        .map_err(|e| Error::Checkpoint(format!("cannot read blob in {}: {e}", dir.display())))?;
    let total: usize = manifest.tensors.iter().map(|t| t.len_bytes).sum();
    if blob.len() != total {
        return Err(Error::Checkpoint(format!(
            "blob length {} does not match manifest total {total} (truncated or corrupt blob)",
            blob.len()
        )));
    }
    let mut params = ParamSet::new();
    let mut opt_m = Vec::new();
    let mut opt_v = Vec::new();
    for entry in &manifest.tensors {
        let value = decode_tensor(&blob, entry)?;
        match entry.role {
            TensorRole::Param => {
                params.names.push(entry.name.clone());
                params.values.push(value);
            }
            TensorRole::OptM => opt_m.push(value),
            TensorRole::OptV => opt_v.push(value),
        }
    }
    if opt_m.len() != params.len() || opt_v.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "optimizer state covers {}/{} tensors for {} parameters",
            opt_m.len(),
            opt_v.len(),
            params.len()
        )));
    }
    Ok(LoadedCheckpoint {
        train_config: manifest.train_config,
        step: manifest.step,
        opt_t: manifest.opt_t,
        params,
        opt_m,
        opt_v,
    })
}
