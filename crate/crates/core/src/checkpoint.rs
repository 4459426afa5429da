//! Checkpoint container: one file holding a JSON manifest (config, parameter
//! inventory, payload digest, loss history) followed by the raw parameter
//! payload as little-endian f32 in manifest order.
//!
//! Layout: 8 magic bytes, a little-endian u64 with the manifest's byte
//! length, the manifest JSON, then the payload. The manifest's shape/dtype
//! inventory must match the payload byte count exactly, and the payload is
//! integrity-checked against a SHA-256 digest recorded in the manifest.
//! Loading rebuilds the parameter structure from the config, so a checkpoint
//! is self-contained.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::graph::Mat;
use crate::numeric::params::ParamId;
use crate::train::{init_model, TrainConfig, TrainedModel};

/// File signature of the checkpoint container.
pub const MAGIC: &[u8; 8] = b"H2IADCK1";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: TrainConfig,
    params: Vec<ParamEntry>,
    payload_sha256: String,
    loss_history: Vec<f64>,
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a trained model. Parameters are stored as little-endian f32
/// in row-major order; the working precision is f64, so saving quantizes.
pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut params = Vec::with_capacity(model.store.len());
    let mut payload = Vec::new();
    for i in 0..model.store.len() {
        let id = ParamId(i);
        let value = model.store.value(id);
        let (rows, cols) = value.dim();
        params.push(ParamEntry {
            name: model.store.name(id).to_string(),
            shape: [rows, cols],
            dtype: "f32".into(),
        });
        for v in value.iter() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        params,
        payload_sha256: hex_digest(&payload),
        loss_history: model.loss_history.clone(),
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(16 + manifest_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back into a usable model, verifying the container
/// structure, the parameter inventory and the payload digest.
pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad signature)",
            path.display()
        )));
    }
    let len_start = MAGIC.len();
    let manifest_len = u64::from_le_bytes(
        bytes[len_start..len_start + 8]
            .try_into()
            .expect("slice is 8 bytes"),
    ) as usize;
    let manifest_start = len_start + 8;
    let payload_start = manifest_start.checked_add(manifest_len).ok_or_else(|| {
        Error::Checkpoint("manifest length overflows the file".into())
    })?;
    if payload_start > bytes.len() {
        return Err(Error::Checkpoint(format!(
            "manifest length {manifest_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[manifest_start..payload_start])
        .map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    let payload = &bytes[payload_start..];
    let mut expected_bytes = 0usize;
    for p in &manifest.params {
        if p.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "parameter '{}' has unsupported dtype '{}'",
                p.name, p.dtype
            )));
        }
        expected_bytes += p.shape[0] * p.shape[1] * 4;
    }
    if payload.len() != expected_bytes {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes but the manifest promises {expected_bytes}",
            payload.len()
        )));
    }
    if hex_digest(payload) != manifest.payload_sha256 {
        return Err(Error::Checkpoint(
            "payload integrity check failed (SHA-256 mismatch)".into(),
        ));
    }

    let (mut store, encoder, flow) = init_model(&manifest.config)?;
    if store.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters but the config implies {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let mut offset = 0usize;
    for p in &manifest.params {
        let id = store.id_of(&p.name).ok_or_else(|| {
            Error::Checkpoint(format!("manifest parameter '{}' is not part of this model", p.name))
        })?;
        let count = p.shape[0] * p.shape[1];
        let mut values = Vec::with_capacity(count);
        for k in 0..count {
            let at = offset + 4 * k;
            let raw: [u8; 4] = payload[at..at + 4].try_into().expect("bounds checked above");
            values.push(f64::from(f32::from_le_bytes(raw)));
        }
        offset += 4 * count;
        let mat = Mat::from_shape_vec((p.shape[0], p.shape[1]), values)
            .map_err(|e| Error::Checkpoint(format!("parameter '{}': {e}", p.name)))?;
        store
            .set_value(id, mat)
            .map_err(|e| Error::Checkpoint(format!("parameter '{}': {e}", p.name)))?;
    }

    Ok(TrainedModel {
        config: manifest.config,
        store,
        encoder,
        flow,
        loss_history: manifest.loss_history,
    })
}
