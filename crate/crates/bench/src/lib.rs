//! Shared fixtures for the benchmarks.

use footfix_core::frdm::{DenoiserConfig, FrdmModel, Normalizer, ScheduleConfig};
use footfix_core::synth::{generate_clean, GaitSpec};
use footfix_core::{MotionSequence, Skeleton};

/// A default walk of `len` frames.
pub fn walk(len: usize) -> MotionSequence {
    generate_clean(
        &GaitSpec {
            len,
            ..GaitSpec::default()
        },
        &Skeleton::smpl(),
    )
    .expect("default gait is valid")
}

/// An untrained default-size model marked as trained, for timing only.
pub fn model(steps: usize) -> FrdmModel {
    let data = walk(256);
    let norm = Normalizer::fit([data.frames().view()]).expect("non-empty");
    let mut m = FrdmModel::new(
        ScheduleConfig {
            steps,
            ..ScheduleConfig::default()
        },
        DenoiserConfig::default(),
        norm,
        Skeleton::smpl().knee_feet,
        0,
    )
    .expect("default config is valid");
    m.trained = true;
    m
}
