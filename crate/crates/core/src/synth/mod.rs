//! Procedural motion corpora and controlled artifact injection.

pub mod corrupt;
pub mod gait;

pub use corrupt::{corrupt, ArtifactLabels, ArtifactSpec, JitterSpec, SegmentSpec, SkateSpec};
pub use gait::{clean_corpus, generate_clean, GaitSpec};
