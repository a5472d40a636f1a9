//! Inference-time guidance applied to each clean-motion estimate.

use nalgebra::Vector3;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frdm::loss::LossWeights;
use crate::motion::features::{join_raw, split_features, POS_OFFSET};
use crate::motion::kinematics::{integrate_root, recover_global_with, to_local_positions};
use crate::motion::GlobalPositions;

/// Guidance and loss settings of the restoration model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Steps `t >= t_th` use geometric guidance, earlier ones foot-contact guidance.
    pub t_th: usize,
    /// Tolerance of the epsilon-insensitive rotation/position loss.
    pub epsilon: f64,
    pub weights: LossWeights,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            t_th: 10,
            epsilon: 0.1,
            weights: LossWeights::default(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.t_th < 1 || self.t_th > steps {
            return Err(Error::config("guidance.t_th", format!("{} outside 1..={steps}", self.t_th)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("guidance.epsilon", "must be > 0"));
        }
        self.weights.validate()
    }
}

fn check_weight(w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::config("w_t", format!("{w} outside [0, 1]")));
    }
    Ok(())
}

/// Geometric guidance: positions and rotations blended towards the original,
/// `(1 - w) * original + w * pred`; root and velocities from the prediction.
pub fn geometric_guidance(pred: ArrayView2<f64>, original: ArrayView2<f64>, w: f64) -> Result<Array2<f64>> {
    check_weight(w)?;
    if pred.dim() != original.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match original {:?}",
            pred.dim(),
            original.dim()
        )));
    }
    split_features(pred)?;
    let mut out = pred.to_owned();
    let mut geo = out.slice_mut(s![.., POS_OFFSET..]);
    geo.zip_mut_with(&original.slice(s![.., POS_OFFSET..]), |p, o| {
        *p = (1.0 - w) * *o + w * *p;
    });
    Ok(out)
}

/// Damps contact-foot velocities: `w b v + (1 - b) v` on the joints in `feet`
/// (`contact` is `L x |feet|`); other joints pass through.
pub fn damp_contact_velocities(vel: ArrayView3<f64>, contact: ArrayView2<f64>, feet: &[usize], w: f64) -> Result<Array3<f64>> {
    check_weight(w)?;
    let len = vel.dim().0;
    if contact.dim() != (len, feet.len()) {
        return Err(Error::Shape(format!(
            "contact mask {:?} does not match {len} frames x {} feet",
            contact.dim(),
            feet.len()
        )));
    }
    if let Some(j) = feet.iter().find(|&&j| j >= vel.dim().1) {
        return Err(Error::Shape(format!("foot joint {j} outside the velocity block")));
    }
    let mut out = vel.to_owned();
    for t in 0..len {
        for (k, &j) in feet.iter().enumerate() {
            let b = contact[[t, k]];
            for c in 0..3 {
                let v = vel[[t, j, c]];
                out[[t, j, c]] = w * b * v + (1.0 - b) * v;
            }
        }
    }
    Ok(out)
}

fn smootherstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Foot-contact guidance: damped velocities, with foot positions
/// re-integrated from them along the predicted root; rotations and root are
/// the prediction's.
///
/// Within each contact run a foot follows the running integral of its damped
/// velocity, starting where the prediction puts it at the first contact
/// frame. The offset from the prediction left at the end of the run fades
/// out over the following non-contact frames, so offsets do not pile up
/// along the sequence. With `b = 0` the prediction is returned unchanged.
pub fn foot_contact_guidance(pred: ArrayView2<f64>, contact: ArrayView2<f64>, feet: &[usize], w: f64) -> Result<Array2<f64>> {
    let mut blocks = split_features(pred)?;
    let vel = damp_contact_velocities(blocks.vel.view(), contact, feet, w)?;
    let traj = integrate_root(blocks.root.view())?;
    let predicted = recover_global_with(&traj, blocks.pos.view())?;
    let mut world = predicted.data().clone();
    let len = world.dim().0;
    for (k, &j) in feet.iter().enumerate() {
        let grounded = |t: usize| contact[[t, k]] != 0.0;
        let mut offset = Vector3::zeros();
        let mut pos = predicted.joint(0, j);
        let mut t = 0;
        while t < len {
            if grounded(t) {
                pos = if t > 0 && grounded(t - 1) {
                    pos + traj.heading(t) * Vector3::from_fn(|c, _| vel[[t, j, c]])
                } else {
                    predicted.joint(t, j) + offset
                };
                offset = pos - predicted.joint(t, j);
                for c in 0..3 {
                    world[[t, j, c]] = pos[c];
                }
                t += 1;
            } else {
                let end = (t..len).find(|&s| grounded(s)).unwrap_or(len);
                let n = end - t;
                for (i, s) in (t..end).enumerate() {
                    let fade = 1.0 - smootherstep((i + 1) as f64 / (n + 1) as f64);
                    pos = predicted.joint(s, j) + offset * fade;
                    for c in 0..3 {
                        world[[s, j, c]] = pos[c];
                    }
                }
                offset *= 1.0 - smootherstep(n as f64 / (n + 1) as f64);
                t = end;
            }
        }
    }
    blocks.pos = to_local_positions(&traj, &GlobalPositions::new(world)?);
    blocks.vel = vel;
    join_raw(&blocks)
}
