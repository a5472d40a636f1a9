//! Self-supervised training on clean motion.

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::ContactThresholds;
use crate::error::{Error, Result};
use crate::frdm::guidance::GuidanceConfig;
use crate::frdm::loss::{total_loss, LossBreakdown, LossSpec, LossTarget};
use crate::frdm::model::FrdmModel;
use crate::frdm::schedule::noisy;
use crate::motion::{MotionSequence, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Training windows are random crops of this many frames.
    pub crop_len: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Smoothing factor of the reported moving-average loss.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1500,
            batch_size: 8,
            crop_len: 64,
            learning_rate: 2e-3,
            grad_clip: 1.0,
            ema_decay: 0.95,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("train", "steps and batch_size must be at least 1"));
        }
        if self.crop_len < 4 {
            return Err(Error::config("train.crop_len", "must be at least 4"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("train.ema_decay", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    pub beta1: f64,
    pub beta2: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// One training example: the loss of a single noised crop and its parameter gradient.
pub fn sample_loss(
    model: &FrdmModel,
    x0: ArrayView2<f64>,
    t: usize,
    noise: ArrayView2<f64>,
    target: &LossTarget,
    spec: &LossSpec,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let norm = model.normalizer();
    let z0 = norm.normalize(x0);
    let zt = noisy(z0.view(), model.schedule().alpha_bar(t), noise)?;
    let merged = model.mask().merge(zt.view(), z0.view())?;
    let (pred_z, cache) = model.predict_cached(merged.view(), t)?;
    if pred_z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("non-finite prediction at diffusion step {t}"),
        });
    }
    let pred = norm.denormalize(pred_z.view());
    let (loss, d_raw) = total_loss(pred.view(), target, spec)?;
    // only the editable dims come from the network
    let mut d_out = d_raw;
    for mut row in d_out.rows_mut() {
        for (d, g) in row.iter_mut().enumerate() {
            *g = if model.mask().is_editable(d) { *g * norm.std[d] } else { 0.0 };
        }
    }
    let mut grad = vec![0.0; model.denoiser().num_params()];
    model.denoiser().backward(&cache, d_out.view(), &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch-mean loss of every step.
    pub history: Vec<LossBreakdown>,
    /// Moving average of the total loss after each step.
    pub ema: Vec<f64>,
}

impl TrainReport {
    pub fn final_ema(&self) -> f64 {
        self.ema.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains the denoiser on a clean corpus. Each step draws `batch_size`
/// random crops, step indices and noise from a stream keyed by
/// `(seed, step)`; per-example gradients are reduced in batch order, so the
/// result does not depend on the thread count.
pub fn train(
    model: &mut FrdmModel,
    corpus: &[MotionSequence],
    skeleton: &Skeleton,
    guidance: &GuidanceConfig,
    thresholds: &ContactThresholds,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    guidance.validate(model.schedule().steps())?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus is empty".into()));
    }
    let mut adam = Adam::new(model.denoiser().num_params());
    let mut report = TrainReport::default();
    let mut ema = None;
    let steps_t = model.schedule().steps();
    for step in 0..cfg.steps {
        let results: Vec<Result<(LossBreakdown, Vec<f64>)>> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((step as u64) << 16) | b as u64);
                let m = &corpus[rng.random_range(0..corpus.len())];
                let len = m.len().min(cfg.crop_len);
                let start = rng.random_range(0..=m.len() - len);
                let x0 = m.frames().slice(s![start..start + len, ..]);
                let t = rng.random_range(1..=steps_t);
                let noise = Array2::from_shape_simple_fn(x0.raw_dim(), || StandardNormal.sample(&mut rng));
                let target = LossTarget::new(x0, skeleton, thresholds)?;
                let spec = LossSpec {
                    weights: guidance.weights,
                    epsilon: guidance.epsilon,
                    skeleton,
                    normalizer: model.normalizer(),
                };
                sample_loss(model, x0, t, noise.view(), &target, &spec)
            })
            .collect();

        let mut loss = LossBreakdown::default();
        let mut grad = vec![0.0; model.denoiser().num_params()];
        for r in results {
            let (l, g) = r.map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step, detail },
                e => e,
            })?;
            loss.add(&l);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let inv = 1.0 / cfg.batch_size as f64;
        loss.scale(inv);
        let mut norm_sq = 0.0;
        for g in grad.iter_mut() {
            *g *= inv;
            norm_sq += *g * *g;
        }
        let gnorm = norm_sq.sqrt();
        if !loss.is_finite() || !gnorm.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {loss:?}, gradient norm {gnorm}"),
            });
        }
        if gnorm > cfg.grad_clip {
            let k = cfg.grad_clip / gnorm;
            grad.iter_mut().for_each(|g| *g *= k);
        }
        // cosine decay to a tenth of the base rate
        let progress = step as f64 / cfg.steps as f64;
        let lr = cfg.learning_rate * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam.update(model.denoiser_mut().params_mut(), &grad, lr);

        let e = match ema {
            None => loss.total,
            Some(prev) => cfg.ema_decay * prev + (1.0 - cfg.ema_decay) * loss.total,
        };
        ema = Some(e);
        on_step(step, &loss, e);
        report.history.push(loss);
        report.ema.push(e);
    }
    if model.denoiser().params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence {
            step: cfg.steps,
            detail: "non-finite parameters".into(),
        });
    }
    model.trained = true;
    Ok(report)
}
