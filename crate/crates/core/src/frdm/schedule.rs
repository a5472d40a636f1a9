//! Variance schedule and forward noising.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear beta schedule parameters. The endpoints are given for a
/// 1000-step reference schedule and rescaled by `1000 / steps` (capped at
/// `MAX_BETA`), so that `alpha_bar` reaches (nearly) zero for any step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

const MAX_BETA: f64 = 0.999;

/// Per-step variances `beta[1..=T]` and their cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(cfg: &ScheduleConfig) -> Result<Self> {
        if cfg.steps == 0 {
            return Err(Error::config("schedule.steps", "must be at least 1"));
        }
        let scale = 1000.0 / cfg.steps as f64;
        if !(cfg.beta_start > 0.0 && cfg.beta_end >= cfg.beta_start && cfg.beta_end < 1.0) {
            return Err(Error::config(
                "schedule.beta",
                format!("{}..{} must satisfy 0 < start <= end < 1", cfg.beta_start, cfg.beta_end),
            ));
        }
        let (b0, b1) = ((cfg.beta_start * scale).min(MAX_BETA), (cfg.beta_end * scale).min(MAX_BETA));
        let betas = (0..cfg.steps)
            .map(|i| {
                if cfg.steps == 1 {
                    b0
                } else {
                    b0 + (b1 - b0) * i as f64 / (cfg.steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Schedule from explicit betas; each must lie in `[0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule.betas", "empty schedule"));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::config("schedule.betas", format!("beta {b} outside [0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(DiffusionSchedule { betas, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    /// `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) noise`.
    pub fn add_noise(&self, x0: ArrayView2<f64>, t: usize, noise: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_step(t)?;
        noisy(x0, self.alpha_bar(t), noise)
    }
}

/// Forward noising at an explicit `alpha_bar` in `[0, 1]`.
pub fn noisy(x0: ArrayView2<f64>, alpha_bar: f64, noise: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x0.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "noise {:?} does not match motion {:?}",
            noise.dim(),
            x0.dim()
        )));
    }
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut out = x0.to_owned();
    out.zip_mut_with(&noise, |x, n| *x = a * *x + s * n);
    Ok(out)
}
