//! Training losses of the restoration model, with gradients.
//!
//! All geometric terms act on de-normalized features; the reconstruction
//! terms are mean squared errors in normalized units.

use nalgebra::Vector3;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::contact::{detect_contact, ContactThresholds};
use crate::error::{Error, Result};
use crate::frdm::merge::Normalizer;
use crate::motion::features::{join_raw, split_features, FeatureBlocks, FEATURE_DIM, NUM_JOINTS, ROOT_DIM};
use crate::motion::kinematics::{
    fk_frame, fk_frame_backward, integrate_local_velocities, integrate_local_velocities_backward, integrate_root,
    integrate_root_backward, recover_global_backward, recover_global_with, TrajectoryGrad,
};
use crate::motion::Skeleton;

/// Loss weights `lambda_recon, lambda_root, lambda_foot, lambda_vp, lambda_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub root: f64,
    pub foot: f64,
    pub vp: f64,
    pub eps_rp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            root: 1.0,
            foot: 1.0,
            vp: 0.5,
            eps_rp: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("recon", self.recon),
            ("root", self.root),
            ("foot", self.foot),
            ("vp", self.vp),
            ("eps_rp", self.eps_rp),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("loss_weights.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub root: f64,
    pub foot: f64,
    pub vp: f64,
    pub eps_rp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.recon, self.root, self.foot, self.vp, self.eps_rp, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.recon += o.recon;
        self.root += o.root;
        self.foot += o.foot;
        self.vp += o.vp;
        self.eps_rp += o.eps_rp;
        self.total += o.total;
    }

    pub fn scale(&mut self, k: f64) {
        for v in [
            &mut self.recon,
            &mut self.root,
            &mut self.foot,
            &mut self.vp,
            &mut self.eps_rp,
            &mut self.total,
        ] {
            *v *= k;
        }
    }
}

/// Ground-truth quantities a prediction is scored against.
#[derive(Debug, Clone)]
pub struct LossTarget {
    pub x0: Array2<f64>,
    /// Contact indicators `b`, `L x |F|`, from the clean positions.
    pub contact: Array2<f64>,
    pub feet: Vec<usize>,
    /// Frame-0 integration anchor `P_0[0] - v_0[0]` per joint, `22 x 3`.
    pub anchor: Array2<f64>,
}

impl LossTarget {
    pub fn new(x0: ArrayView2<f64>, skeleton: &Skeleton, thresholds: &ContactThresholds) -> Result<Self> {
        let blocks = split_features(x0)?;
        let traj = integrate_root(blocks.root.view())?;
        let global = recover_global_with(&traj, blocks.pos.view())?;
        let feet = skeleton.foot_joints(thresholds);
        let mask = detect_contact(&global, &feet, thresholds.v_th)?;
        let anchor = velocity_anchor(&global.data().index_axis(Axis(0), 0), &blocks, &traj);
        Ok(LossTarget {
            x0: x0.to_owned(),
            contact: mask.values().mapv(f64::from),
            feet: feet.iter().map(|f| f.index).collect(),
            anchor,
        })
    }
}

/// `P[0] - R(yaw[0]) v[0]`: the position each joint integrates from.
pub(crate) fn velocity_anchor(
    p0: &ndarray::ArrayView2<f64>,
    blocks: &FeatureBlocks,
    traj: &crate::motion::RootTrajectory,
) -> Array2<f64> {
    let heading = traj.heading(0);
    let mut anchor = Array2::zeros((NUM_JOINTS, 3));
    for j in 0..NUM_JOINTS {
        let v = Vector3::new(blocks.vel[[0, j, 0]], blocks.vel[[0, j, 1]], blocks.vel[[0, j, 2]]);
        let w = heading * v;
        for c in 0..3 {
            anchor[[j, c]] = p0[[j, c]] - w[c];
        }
    }
    anchor
}

fn v3(a: &Array3<f64>, t: usize, j: usize) -> Vector3<f64> {
    Vector3::new(a[[t, j, 0]], a[[t, j, 1]], a[[t, j, 2]])
}

fn add_v3(a: &mut Array3<f64>, t: usize, j: usize, v: &Vector3<f64>) {
    for c in 0..3 {
        a[[t, j, c]] += v[c];
    }
}

/// Forward quantities of a raw prediction and the gradient accumulators
/// for the geometric losses.
struct Geometry {
    blocks: FeatureBlocks,
    traj: crate::motion::RootTrajectory,
    global: Array3<f64>,
    d_global: Array3<f64>,
    d_traj: TrajectoryGrad,
    d_vel: Array3<f64>,
    d_pos: Array3<f64>,
    d_rot: Array3<f64>,
}

impl Geometry {
    fn new(pred: ArrayView2<f64>) -> Result<Self> {
        let blocks = split_features(pred)?;
        let traj = integrate_root(blocks.root.view())?;
        let global = recover_global_with(&traj, blocks.pos.view())?.into_inner();
        let len = pred.nrows();
        Ok(Geometry {
            d_global: Array3::zeros(global.raw_dim()),
            d_traj: TrajectoryGrad::zeros(len),
            d_vel: Array3::zeros(blocks.vel.raw_dim()),
            d_pos: Array3::zeros(blocks.pos.raw_dim()),
            d_rot: Array3::zeros(blocks.rot.raw_dim()),
            blocks,
            traj,
            global,
        })
    }

    /// `sum_t sum_{j in F} b[t,j] |P[t+1,j] - P[t,j]|^2`.
    fn foot(&mut self, contact: &Array2<f64>, feet: &[usize], weight: f64) -> f64 {
        let len = self.global.dim().0;
        let mut total = 0.0;
        for t in 0..len.saturating_sub(1) {
            for (k, &j) in feet.iter().enumerate() {
                let b = contact[[t, k]];
                if b == 0.0 {
                    continue;
                }
                let d = v3(&self.global, t + 1, j) - v3(&self.global, t, j);
                total += b * d.norm_squared();
                let g = d * (2.0 * b * weight);
                add_v3(&mut self.d_global, t + 1, j, &g);
                add_v3(&mut self.d_global, t, j, &-g);
            }
        }
        total
    }

    /// `sum_t sum_{j=1..21} |W[t,j] - P[t,j]|^2` where `W` integrates the
    /// predicted velocities along the predicted root from `anchor`.
    fn vp(&mut self, anchor: &Array2<f64>, weight: f64) -> Result<f64> {
        let w = integrate_local_velocities(&self.traj, self.blocks.vel.view(), anchor.view())?;
        let (len, joints, _) = w.dim();
        let mut d_w = Array3::zeros(w.raw_dim());
        let mut total = 0.0;
        for t in 0..len {
            for j in 1..joints {
                let r = v3(&w, t, j) - v3(&self.global, t, j);
                total += r.norm_squared();
                let g = r * (2.0 * weight);
                add_v3(&mut d_w, t, j, &g);
                add_v3(&mut self.d_global, t, j, &-g);
            }
        }
        if weight != 0.0 {
            let (dv, dyaw) = integrate_local_velocities_backward(&self.traj, self.blocks.vel.view(), d_w.view());
            self.d_vel += &dv;
            self.d_traj.yaw += &dyaw;
        }
        Ok(total)
    }

    /// `sum_t sum_{j in KF} max(|FK(r)_j - p_j|^2 - eps, 0)^2`. Frames whose
    /// rotations are degenerate are skipped.
    fn eps_rp(&mut self, skeleton: &Skeleton, knee_feet: &[usize], eps: f64, weight: f64) -> f64 {
        let len = self.blocks.rot.dim().0;
        let mut total = 0.0;
        for t in 0..len {
            let rot = self.blocks.rot.index_axis(Axis(0), t);
            let Ok(frame) = fk_frame(rot, skeleton) else {
                continue;
            };
            let mut d_fk = vec![Vector3::zeros(); NUM_JOINTS];
            let mut active = false;
            for &j in knee_feet {
                let r = frame.positions[j] - v3(&self.blocks.pos, t, j - 1);
                let excess = r.norm_squared() - eps;
                if excess <= 0.0 {
                    continue;
                }
                total += excess * excess;
                let g = r * (4.0 * excess * weight);
                d_fk[j] += g;
                add_v3(&mut self.d_pos, t, j - 1, &-g);
                active = true;
            }
            if active {
                let g = fk_frame_backward(&frame, rot, skeleton, &d_fk);
                let mut dst = self.d_rot.index_axis_mut(Axis(0), t);
                dst += &g;
            }
        }
        total
    }

    /// Gradient of the accumulated geometric terms with respect to the raw features.
    fn gradient(mut self) -> Result<Array2<f64>> {
        let (tg, dpos) = recover_global_backward(&self.traj, self.blocks.pos.view(), self.d_global.view());
        self.d_traj.accumulate(&tg);
        self.d_pos += &dpos;
        let d_root = integrate_root_backward(self.blocks.root.view(), &self.traj, &self.d_traj);
        join_raw(&FeatureBlocks {
            root: d_root,
            vel: self.d_vel,
            pos: self.d_pos,
            rot: self.d_rot,
        })
    }
}

/// Loss settings shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct LossSpec<'a> {
    pub weights: LossWeights,
    pub epsilon: f64,
    pub skeleton: &'a Skeleton,
    pub normalizer: &'a Normalizer,
}

/// Weighted loss of a raw prediction and its gradient with respect to the
/// raw prediction.
pub fn total_loss(pred: ArrayView2<f64>, target: &LossTarget, spec: &LossSpec) -> Result<(LossBreakdown, Array2<f64>)> {
    if pred.dim() != target.x0.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match target {:?}",
            pred.dim(),
            target.x0.dim()
        )));
    }
    let w = &spec.weights;
    let std = &spec.normalizer.std;
    let len = pred.nrows();
    let mut out = LossBreakdown::default();
    let mut grad = Array2::zeros(pred.raw_dim());

    let n_all = (len * FEATURE_DIM) as f64;
    let n_root = (len * ROOT_DIM) as f64;
    for t in 0..len {
        for d in 0..FEATURE_DIM {
            let r = (pred[[t, d]] - target.x0[[t, d]]) / std[d];
            let sq = r * r;
            out.recon += sq / n_all;
            let mut g = w.recon * 2.0 * r / n_all;
            if d < ROOT_DIM {
                out.root += sq / n_root;
                g += w.root * 2.0 * r / n_root;
            }
            grad[[t, d]] = g / std[d];
        }
    }

    let mut geo = Geometry::new(pred)?;
    out.foot = geo.foot(&target.contact, &target.feet, w.foot);
    out.vp = geo.vp(&target.anchor, w.vp)?;
    out.eps_rp = geo.eps_rp(spec.skeleton, &spec.skeleton.knee_feet, spec.epsilon, w.eps_rp);
    grad += &geo.gradient()?;

    out.total = w.recon * out.recon + w.root * out.root + w.foot * out.foot + w.vp * out.vp + w.eps_rp * out.eps_rp;
    Ok((out, grad))
}

/// Foot loss of a raw prediction against a contact mask (`L x |feet|`).
pub fn loss_foot(pred: ArrayView2<f64>, contact: &Array2<f64>, feet: &[usize]) -> Result<f64> {
    if contact.dim() != (pred.nrows(), feet.len()) {
        return Err(Error::Shape(format!(
            "contact mask {:?} does not match {} frames x {} feet",
            contact.dim(),
            pred.nrows(),
            feet.len()
        )));
    }
    Ok(Geometry::new(pred)?.foot(contact, feet, 0.0))
}

/// Velocity/position consistency of a raw prediction.
pub fn loss_vp(pred: ArrayView2<f64>, anchor: &Array2<f64>) -> Result<f64> {
    Geometry::new(pred)?.vp(anchor, 0.0)
}

/// Epsilon-insensitive rotation/position consistency over `knee_feet`.
pub fn loss_eps_rp(pred: ArrayView2<f64>, skeleton: &Skeleton, knee_feet: &[usize], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::config("epsilon", "must be > 0"));
    }
    Ok(Geometry::new(pred)?.eps_rp(skeleton, knee_feet, eps, 0.0))
}
