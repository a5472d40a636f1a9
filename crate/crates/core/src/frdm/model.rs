//! The restoration model and guided inference.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::contact::{detect_contact, ContactThresholds};
use crate::error::{Error, Result};
use crate::frdm::guidance::{foot_contact_guidance, geometric_guidance, GuidanceConfig};
use crate::frdm::merge::{FeatureMask, Normalizer};
use crate::frdm::network::{Denoiser, DenoiserConfig, ForwardCache};
use crate::frdm::schedule::{DiffusionSchedule, ScheduleConfig};
use crate::motion::{MotionSequence, Skeleton};

/// Denoiser, schedule and feature statistics of a restoration model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrdmModel {
    schedule_config: ScheduleConfig,
    schedule: DiffusionSchedule,
    denoiser: Denoiser,
    normalizer: Normalizer,
    knee_feet: Vec<usize>,
    mask: FeatureMask,
    /// Set once the denoiser has been fitted; restoration refuses untrained models.
    pub trained: bool,
    /// Seed the model was initialized and trained with.
    pub seed: u64,
}

impl FrdmModel {
    pub fn new(
        schedule_config: ScheduleConfig,
        denoiser: DenoiserConfig,
        normalizer: Normalizer,
        knee_feet: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let net = Denoiser::new(denoiser, seed)?;
        Self::from_parts(schedule_config, net, normalizer, knee_feet, false, seed)
    }

    pub fn from_parts(
        schedule_config: ScheduleConfig,
        denoiser: Denoiser,
        normalizer: Normalizer,
        knee_feet: Vec<usize>,
        trained: bool,
        seed: u64,
    ) -> Result<Self> {
        normalizer.validate()?;
        Ok(FrdmModel {
            schedule: DiffusionSchedule::new(&schedule_config)?,
            schedule_config,
            mask: FeatureMask::new(&knee_feet)?,
            denoiser,
            normalizer,
            knee_feet,
            trained,
            seed,
        })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn schedule_config(&self) -> &ScheduleConfig {
        &self.schedule_config
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    pub fn denoiser_mut(&mut self) -> &mut Denoiser {
        &mut self.denoiser
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn knee_feet(&self) -> &[usize] {
        &self.knee_feet
    }

    pub fn mask(&self) -> &FeatureMask {
        &self.mask
    }

    /// Clean estimate (normalized units) from a merged noisy input: the
    /// network output on the root/knee/foot dims, the input elsewhere.
    pub fn predict(&self, z: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        Ok(self.predict_cached(z, t)?.0)
    }

    pub(crate) fn predict_cached(&self, z: ArrayView2<f64>, t: usize) -> Result<(Array2<f64>, ForwardCache)> {
        self.schedule.check_step(t)?;
        let (out, cache) = self.denoiser.forward_cached(z, t)?;
        let mut pred = z.to_owned();
        self.mask.merge_into(out.view(), &mut pred);
        Ok((pred, cache))
    }
}

/// Runs guided denoising on `x`. The root and knee/foot dims are
/// regenerated; every other dim is copied from `x` unchanged.
pub fn restore(
    model: &FrdmModel,
    x: &MotionSequence,
    skeleton: &Skeleton,
    guidance: &GuidanceConfig,
    thresholds: &ContactThresholds,
    seed: u64,
) -> Result<MotionSequence> {
    if !model.trained {
        return Err(Error::ModelState("restoration needs a trained denoiser".into()));
    }
    let steps = model.schedule.steps();
    guidance.validate(steps)?;
    let norm = &model.normalizer;
    let raw = x.frames();
    let z_in = norm.normalize(raw.view());

    let feet = skeleton.foot_joints(thresholds);
    let contact = detect_contact(&x.global_positions(), &feet, thresholds.v_th)?
        .values()
        .mapv(f64::from);
    let foot_idx: Vec<usize> = feet.iter().map(|f| f.index).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_t_init = Array2::from_shape_simple_fn(raw.raw_dim(), || StandardNormal.sample(&mut rng));
    let mut z = x_t_init.clone();
    let mut guided = raw.clone();
    for t in (1..=steps).rev() {
        let merged = model.mask.merge(z.view(), z_in.view())?;
        let pred = norm.denormalize(model.predict(merged.view(), t)?.view());
        let w = t as f64 / steps as f64;
        guided = if t >= guidance.t_th {
            geometric_guidance(pred.view(), raw.view(), w)?
        } else {
            foot_contact_guidance(pred.view(), contact.view(), &foot_idx, w)?
        };
        let a = model.schedule.alpha_bar(t - 1);
        z = norm.normalize(guided.view());
        z.zip_mut_with(&x_t_init, |v, n| *v = a.sqrt() * *v + (1.0 - a).sqrt() * n);
    }
    let out = model.mask.merge(guided.view(), raw.view())?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("restoration produced non-finite features".into()));
    }
    MotionSequence::new(out, x.fps())
}

/// Restores each sequence in parallel; sequence `i` uses seed `seed + i`.
pub fn restore_corpus(
    model: &FrdmModel,
    corpus: &[MotionSequence],
    skeleton: &Skeleton,
    guidance: &GuidanceConfig,
    thresholds: &ContactThresholds,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, m)| restore(model, m, skeleton, guidance, thresholds, seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::features::FEATURE_DIM;
    use crate::synth::{generate_clean, GaitSpec};

    fn model(trained: bool) -> FrdmModel {
        let skel = Skeleton::smpl();
        let mut m = FrdmModel::new(
            ScheduleConfig {
                steps: 12,
                ..ScheduleConfig::default()
            },
            DenoiserConfig {
                hidden: 8,
                blocks: 2,
                time_features: 4,
            },
            Normalizer::identity(),
            skel.knee_feet.clone(),
            4,
        )
        .unwrap();
        m.trained = trained;
        m
    }

    fn walk() -> MotionSequence {
        generate_clean(
            &GaitSpec {
                len: 48,
                ..GaitSpec::default()
            },
            &Skeleton::smpl(),
        )
        .unwrap()
    }

    #[test]
    fn untrained_and_bad_threshold_rejected() {
        let (skel, th) = (Skeleton::smpl(), ContactThresholds::default());
        let x = walk();
        let g = GuidanceConfig::default();
        assert!(matches!(restore(&model(false), &x, &skel, &g, &th, 0), Err(Error::ModelState(_))));
        let bad = GuidanceConfig { t_th: 13, ..g };
        assert!(matches!(restore(&model(true), &x, &skel, &bad, &th, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn deterministic_and_preserves_upper_body() {
        let (skel, th) = (Skeleton::smpl(), ContactThresholds::default());
        let m = model(true);
        let x = walk();
        let g = GuidanceConfig {
            t_th: 4,
            ..GuidanceConfig::default()
        };
        let a = restore(&m, &x, &skel, &g, &th, 9).unwrap();
        let b = restore(&m, &x, &skel, &g, &th, 9).unwrap();
        assert_eq!(a.frames(), b.frames());
        for d in 0..FEATURE_DIM {
            if !m.mask().is_editable(d) {
                assert_eq!(a.frames().column(d), x.frames().column(d));
            }
        }
        let c = restore(&m, &x, &skel, &g, &th, 10).unwrap();
        assert_ne!(a.frames(), c.frames());
    }
}
