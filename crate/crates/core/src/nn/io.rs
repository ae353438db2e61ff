//! Model files: one JSON header line, then the little-endian `f32`
//! parameter blob in storage order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Model, ModelSpec};
use super::NnError;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub schema_version: u32,
    pub model_spec: ModelSpec,
    pub seed: u64,
    pub sha256: String,
    #[serde(default)]
    pub config_digest: Option<String>,
}

pub fn encode_model(model: &Model, config_digest: Option<&str>) -> Vec<u8> {
    let blob = model.param_bytes();
    let header = ModelHeader {
        schema_version: MODEL_SCHEMA_VERSION,
        model_spec: model.spec.clone(),
        seed: model.seed,
        sha256: hex::encode(Sha256::digest(&blob)),
        config_digest: config_digest.map(str::to_owned),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<(Model, ModelHeader), NnError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NnError::Format("no header line".into()))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| NnError::Format(format!("header: {e}")))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| NnError::Format("header lacks schema_version".into()))? as u32;
    if found != MODEL_SCHEMA_VERSION {
        return Err(NnError::VersionMismatch { found, expected: MODEL_SCHEMA_VERSION });
    }
    let header: ModelHeader =
        serde_json::from_value(value).map_err(|e| NnError::Format(format!("header: {e}")))?;
    let blob = &bytes[nl + 1..];
    let actual = hex::encode(Sha256::digest(blob));
    if actual != header.sha256 {
        return Err(NnError::DigestMismatch { expected: header.sha256, actual });
    }
    if blob.len() % 4 != 0 {
        return Err(NnError::Format(format!("blob length {} is not a multiple of 4", blob.len())));
    }
    let flat: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let model = Model::from_params(header.model_spec.clone(), header.seed, &flat)?;
    Ok((model, header))
}

pub fn save_model(model: &Model, path: &Path, config_digest: Option<&str>) -> Result<(), NnError> {
    if model.params().any(|p| !p.is_finite()) {
        return Err(NnError::Format("refusing to save non-finite parameters".into()));
    }
    fs::write(path, encode_model(model, config_digest))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Model, ModelHeader), NnError> {
    decode_model(&fs::read(path)?)
}
