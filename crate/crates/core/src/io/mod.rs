//! File formats: `.mseq` motions, model checkpoints, JSON documents.

pub mod checkpoint;
pub mod config;
pub mod json;
pub mod mseq;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{sha256_hex, Manifest, ManifestEntry, RunConfig, SkeletonFile, SpectralConfig, SynthConfig};
pub use json::{from_json_str, load_json, save_json, to_json_string};
pub use mseq::{decode_motion_file, encode_motion_file, load_mseq, save_mseq, MseqFile};

use std::path::Path;

use crate::error::Result;
use crate::Skeleton;

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<Skeleton> {
    load_json::<SkeletonFile>(path)?.into_skeleton()
}

pub fn save_skeleton(path: impl AsRef<Path>, skeleton: &Skeleton) -> Result<()> {
    save_json(path, &SkeletonFile::from(skeleton))
}
