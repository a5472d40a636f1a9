//! Model checkpoints.
//!
//! Layout (little-endian): `"FRDM"`, version `u32`, header length `u32`, a
//! JSON header of that many bytes, then the `f64` blob: normalizer means
//! (259), normalizer stds (259), denoiser parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frdm::{Denoiser, DenoiserConfig, FrdmModel, Normalizer, ScheduleConfig};
use crate::motion::features::FEATURE_DIM;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FRDM";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub knee_feet: Vec<usize>,
    pub seed: u64,
    pub trained: bool,
    pub num_params: usize,
}

pub fn encode_checkpoint(model: &FrdmModel) -> Vec<u8> {
    let header = CheckpointHeader {
        schedule: *model.schedule_config(),
        denoiser: *model.denoiser().config(),
        knee_feet: model.knee_feet().to_vec(),
        seed: model.seed,
        trained: model.trained,
        num_params: model.denoiser().num_params(),
    };
    let json = serde_json::to_vec(&header).expect("plain data serializes");
    let norm = model.normalizer();
    let blob = norm.mean.iter().chain(&norm.std).chain(model.denoiser().params());
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 8 * (2 * FEATURE_DIM + header.num_params));
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FrdmModel> {
    let word = |at: usize| -> Result<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .map(|b| b.try_into().expect("4 bytes"))
            .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))
    };
    if word(0)? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"FRDM\""));
    }
    let version = u32::from_le_bytes(word(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(word(8)?) as usize;
    let json = bytes
        .get(PREFIX_LEN..PREFIX_LEN + header_len)
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| {
        // serde_json columns are 1-based; single-line header
        let at = if e.line() <= 1 { e.column().saturating_sub(1) } else { 0 };
        Error::format((PREFIX_LEN + at) as u64, format!("header: {e}"))
    })?;
    if header.num_params != header.denoiser.param_count() {
        return Err(Error::format(
            PREFIX_LEN as u64,
            format!(
                "header declares {} parameters, architecture has {}",
                header.num_params,
                header.denoiser.param_count()
            ),
        ));
    }
    let start = PREFIX_LEN + header_len;
    let count = 2 * FEATURE_DIM + header.num_params;
    let end = start + 8 * count;
    if bytes.len() < end {
        return Err(Error::format(bytes.len() as u64, format!("truncated blob, expected {end} bytes")));
    }
    if bytes.len() > end {
        return Err(Error::format(end as u64, format!("{} trailing bytes", bytes.len() - end)));
    }
    let values: Vec<f64> = bytes[start..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((start + 8 * i) as u64, "non-finite value in blob"));
    }
    let normalizer = Normalizer {
        mean: values[..FEATURE_DIM].to_vec(),
        std: values[FEATURE_DIM..2 * FEATURE_DIM].to_vec(),
    };
    let denoiser = Denoiser::from_params(header.denoiser, values[2 * FEATURE_DIM..].to_vec())?;
    FrdmModel::from_parts(header.schedule, denoiser, normalizer, header.knee_feet, header.trained, header.seed)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &FrdmModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FrdmModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
