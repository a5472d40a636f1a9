//! Run configuration, skeleton documents and output manifests.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contact::MetricsConfig;
use crate::error::{Error, Result};
use crate::frdm::{DenoiserConfig, DiffusionSchedule, GuidanceConfig, ScheduleConfig, TrainConfig};
use crate::synth::{ArtifactSpec, GaitSpec, JitterSpec, SkateSpec};
use crate::Skeleton;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub bands: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig { bands: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub gait: GaitSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 200,
            gait: GaitSpec::default(),
        }
    }
}

/// Every hyperparameter of a pipeline run.
///
/// `seed` drives all random draws: corpus generation, corruption (file `i`
/// uses `seed + i`), model initialization and training, restoration noise.
/// The nested `seed` fields of the gait, artifact and training sections are
/// overwritten from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub guidance: GuidanceConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub spectral: SpectralConfig,
    pub synth: SynthConfig,
    pub corrupt: ArtifactSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            guidance: GuidanceConfig::default(),
            train: TrainConfig {
                steps: 3000,
                ..TrainConfig::default()
            },
            metrics: MetricsConfig::default(),
            spectral: SpectralConfig::default(),
            synth: SynthConfig::default(),
            corrupt: ArtifactSpec {
                skate: SkateSpec {
                    fraction: 0.2,
                    ..SkateSpec::default()
                },
                jitter: JitterSpec {
                    sigma: 0.003,
                    joints: Vec::new(),
                },
                ..ArtifactSpec::default()
            },
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        DiffusionSchedule::new(&self.schedule)?;
        self.denoiser.validate()?;
        self.guidance.validate(self.schedule.steps)?;
        self.train.validate()?;
        self.metrics.validate()?;
        if self.spectral.bands == 0 {
            return Err(Error::config("spectral.bands", "must be at least 1"));
        }
        if self.synth.count == 0 {
            return Err(Error::config("synth.count", "must be at least 1"));
        }
        self.synth.gait.validate()?;
        self.corrupt.validate()
    }

    /// Copies the run seed into the nested seed fields.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.gait.seed = seed;
        self.corrupt.seed = seed;
        self.train.seed = seed;
        self
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("plain data serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    /// Per-output seed, when the output was drawn with its own.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent, meters.
    pub offset: [f64; 3],
}

/// Skeleton document: joints in topological order plus the foot, toe and
/// knee/foot index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub joints: Vec<JointEntry>,
    pub feet: Vec<usize>,
    pub toes: Vec<usize>,
    pub knee_feet: Vec<usize>,
}

impl From<&Skeleton> for SkeletonFile {
    fn from(s: &Skeleton) -> Self {
        SkeletonFile {
            joints: (0..s.names.len())
                .map(|j| JointEntry {
                    name: s.names[j].clone(),
                    parent: s.parents[j],
                    offset: [s.offsets[j].x, s.offsets[j].y, s.offsets[j].z],
                })
                .collect(),
            feet: s.feet.clone(),
            toes: s.toes.clone(),
            knee_feet: s.knee_feet.clone(),
        }
    }
}

impl SkeletonFile {
    pub fn into_skeleton(self) -> Result<Skeleton> {
        Skeleton {
            names: self.joints.iter().map(|j| j.name.clone()).collect(),
            parents: self.joints.iter().map(|j| j.parent).collect(),
            offsets: self.joints.iter().map(|j| Vector3::from(j.offset)).collect(),
            feet: self.feet,
            toes: self.toes,
            knee_feet: self.knee_feet,
        }
        .validated()
    }
}
