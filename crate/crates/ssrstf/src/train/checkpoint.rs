//! The "SSRW" checkpoint container.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic      4 bytes  "SSRW"
//! version    u32      1
//! header_len u64
//! header     UTF-8 JSON: model config, tensor index (name -> dtype, shape,
//!            payload byte offset), optional trainer state
//! payload    raw f32 values, one tensor after another in index order
//! ```
//!
//! Model parameters appear under their store names; optimizer moments, when
//! trainer state is saved, under `optim.m.<name>` and `optim.v.<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error as CrateError, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::tensor::Tensor;
use crate::train::adamw::AdamW;
use crate::train::TrainSettings;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SSRW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected \"SSRW\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    UnsupportedVersion { found: u32 },

    #[error("truncated checkpoint: needed {needed} bytes, got {available}")]
    Truncated { needed: usize, available: usize },

    #[error("checkpoint is missing tensor {name:?}")]
    MissingTensor { name: String },

    #[error("checkpoint contains unexpected tensor {name:?}")]
    UnexpectedTensor { name: String },

    #[error("tensor {name:?}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor {name:?}: unsupported dtype {found:?}")]
    Dtype { name: String, found: String },

    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorIndexEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Trainer progress stored alongside the weights for exact resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub settings: TrainSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorIndexEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trainer: Option<TrainerState>,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub weights: ModelWeights<f32>,
    pub trainer: Option<(TrainerState, AdamW<f32>)>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    weights: &ModelWeights<f32>,
    trainer: Option<(&TrainerState, &AdamW<f32>)>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(weights, trainer);
    std::fs::write(path, bytes).map_err(|e| CrateError::io(path, e))
}

pub fn encode_checkpoint(
    weights: &ModelWeights<f32>,
    trainer: Option<(&TrainerState, &AdamW<f32>)>,
) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let push_tensor = |name: String, shape: Vec<usize>, data: &[f32], payload: &mut Vec<u8>, tensors: &mut Vec<TensorIndexEntry>| {
        tensors.push(TensorIndexEntry {
            name,
            dtype: "f32".to_string(),
            shape,
            offset: payload.len() as u64,
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };

    for (def, value) in weights.store.iter() {
        push_tensor(def.name.clone(), value.shape().to_vec(), value.data(), &mut payload, &mut tensors);
    }
    if let Some((_, optimizer)) = trainer {
        for (i, (def, value)) in weights.store.iter().enumerate() {
            push_tensor(
                format!("optim.m.{}", def.name),
                value.shape().to_vec(),
                &optimizer.first_moments()[i],
                &mut payload,
                &mut tensors,
            );
        }
        for (i, (def, value)) in weights.store.iter().enumerate() {
            push_tensor(
                format!("optim.v.{}", def.name),
                value.shape().to_vec(),
                &optimizer.second_moments()[i],
                &mut payload,
                &mut tensors,
            );
        }
    }

    let header = Header {
        config: weights.config,
        tensors,
        trainer: trainer.map(|(state, _)| state.clone()),
    };
    let header_json = serde_json::to_vec(&header).expect("header serialization");

    let mut out = Vec::with_capacity(16 + header_json.len() + payload.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    out
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CrateError::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    const PREFIX: usize = 4 + 4 + 8;
    if bytes.len() < PREFIX {
        return Err(CheckpointError::Truncated { needed: PREFIX, available: bytes.len() }.into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version }.into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < PREFIX + header_len {
        return Err(CheckpointError::Truncated {
            needed: PREFIX + header_len,
            available: bytes.len(),
        }
        .into());
    }
    let header: Header = serde_json::from_slice(&bytes[PREFIX..PREFIX + header_len])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload = &bytes[PREFIX + header_len..];

    let read_tensor = |entry: &TensorIndexEntry| -> Result<Tensor<f32>> {
        if entry.dtype != "f32" {
            return Err(CheckpointError::Dtype {
                name: entry.name.clone(),
                found: entry.dtype.clone(),
            }
            .into());
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 4;
        if payload.len() < end {
            return Err(CheckpointError::Truncated {
                needed: PREFIX + header_len + end,
                available: bytes.len(),
            }
            .into());
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(entry.shape.clone(), data)
    };

    // Rebuild the layout for this config, then overwrite every parameter
    // from the index, validating names and shapes both ways.
    let mut weights: ModelWeights<f32> = ModelWeights::init(header.config, 0)?;
    let find = |name: &str| header.tensors.iter().find(|t| t.name == name);
    for id in weights.store.ids().collect::<Vec<_>>() {
        let def_name = weights.store.def(id).name.clone();
        let entry = find(&def_name)
            .ok_or_else(|| CheckpointError::MissingTensor { name: def_name.clone() })?;
        let expected_shape = weights.store.value(id).shape().to_vec();
        if entry.shape != expected_shape {
            return Err(CheckpointError::TensorShape {
                name: def_name,
                expected: expected_shape,
                found: entry.shape.clone(),
            }
            .into());
        }
        *weights.store.value_mut(id) = read_tensor(entry)?;
    }
    for entry in &header.tensors {
        let known = weights.store.find(&entry.name).is_some()
            || entry.name.starts_with("optim.m.")
            || entry.name.starts_with("optim.v.");
        if !known {
            return Err(CheckpointError::UnexpectedTensor { name: entry.name.clone() }.into());
        }
    }

    let trainer = match header.trainer {
        None => None,
        Some(state) => {
            let mut m = Vec::with_capacity(weights.store.len());
            let mut v = Vec::with_capacity(weights.store.len());
            for def in weights.store.defs() {
                for (target, prefix) in [(&mut m, "optim.m."), (&mut v, "optim.v.")] {
                    let name = format!("{prefix}{}", def.name);
                    let entry = find(&name)
                        .ok_or_else(|| CheckpointError::MissingTensor { name: name.clone() })?;
                    target.push(read_tensor(entry)?.into_data());
                }
            }
            let optimizer = AdamW::from_moments(
                state.global_step,
                state.settings.weight_decay,
                m,
                v,
            );
            Some((state, optimizer))
        }
    };

    Ok(LoadedCheckpoint { weights, trainer })
}
