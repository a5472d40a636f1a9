//! `.mseq` motion files.
//!
//! Layout (little-endian): `"MSEQ"`, version `u32`, fps `f32`, frame count
//! `u32`, feature dim `u32` (always 259), then `L x D` `f32` values row-major.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::features::FEATURE_DIM;
use crate::MotionSequence;

pub const MSEQ_MAGIC: [u8; 4] = *b"MSEQ";
pub const MSEQ_VERSION: u32 = 1;
pub const MSEQ_HEADER_LEN: usize = 20;

/// The raw contents of an `.mseq` file; `data` holds `frames * 259` values.
#[derive(Debug, Clone, PartialEq)]
pub struct MseqFile {
    pub fps: f32,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl MseqFile {
    /// Narrows a motion to `f32`.
    pub fn from_motion(m: &MotionSequence) -> Self {
        MseqFile {
            fps: m.fps() as f32,
            frames: m.len(),
            data: m.frames().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Widens back to a motion; non-finite values are reported at their byte
    /// offset in the encoded file.
    pub fn to_motion(&self) -> Result<MotionSequence> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                (MSEQ_HEADER_LEN + 4 * i) as u64,
                format!("non-finite value at frame {}, feature {}", i / FEATURE_DIM, i % FEATURE_DIM),
            ));
        }
        if self.frames < 2 {
            return Err(Error::format(12, format!("need at least 2 frames, got {}", self.frames)));
        }
        let frames = Array2::from_shape_vec((self.frames, FEATURE_DIM), self.data.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        MotionSequence::new(frames, self.fps as f64)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MSEQ_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MSEQ_MAGIC);
        out.extend_from_slice(&MSEQ_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 4]> {
            bytes
                .get(at..at + 4)
                .map(|b| b.try_into().expect("4 bytes"))
                .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))
        };
        if word(0)? != MSEQ_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"MSEQ\""));
        }
        let version = u32::from_le_bytes(word(4)?);
        if version != MSEQ_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let fps = f32::from_le_bytes(word(8)?);
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::format(8, format!("fps must be positive, got {fps}")));
        }
        let frames = u32::from_le_bytes(word(12)?) as usize;
        let dim = u32::from_le_bytes(word(16)?) as usize;
        if dim != FEATURE_DIM {
            return Err(Error::format(16, format!("feature dim {dim}, expected {FEATURE_DIM}")));
        }
        let end = MSEQ_HEADER_LEN + 4 * frames * dim;
        if bytes.len() < end {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: {frames} frames need {end} bytes, file has {}", bytes.len()),
            ));
        }
        if bytes.len() > end {
            return Err(Error::format(end as u64, format!("{} trailing bytes", bytes.len() - end)));
        }
        let data = bytes[MSEQ_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(MseqFile { fps, frames, data })
    }
}

pub fn encode_motion_file(m: &MotionSequence) -> Vec<u8> {
    MseqFile::from_motion(m).encode()
}

pub fn decode_motion_file(bytes: &[u8]) -> Result<MotionSequence> {
    MseqFile::decode(bytes)?.to_motion()
}

pub fn save_mseq(path: impl AsRef<Path>, m: &MotionSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_motion_file(m)).map_err(|e| Error::io(path, e))
}

pub fn load_mseq(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_motion_file(&bytes)
}
