//! Procedural walking with exactly pinned stance feet.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::features::NUM_JOINTS;
use crate::motion::kinematics::{fk_frame, integrate_root};
use crate::motion::rotation::{axis_angle, matrix_to_rot6d, yaw_matrix};
use crate::motion::skeleton::smpl;
use crate::motion::{encode_motion, GlobalPositions, MotionSequence, Skeleton};

/// Walking parameters. `step_length` is the distance between successive
/// footfalls; `step_period` the frames per step (a gait cycle is two steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSpec {
    pub step_length: f64,
    pub step_period: usize,
    pub hip_height: f64,
    pub arm_swing: f64,
    pub turning_rate: f64,
    pub len: usize,
    pub fps: f64,
    pub seed: u64,
}

impl Default for GaitSpec {
    fn default() -> Self {
        GaitSpec {
            step_length: 0.35,
            step_period: 15,
            hip_height: 0.86,
            arm_swing: 0.35,
            turning_rate: 0.0,
            len: 256,
            fps: 30.0,
            seed: 0,
        }
    }
}

impl GaitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.step_period < 4 {
            return Err(Error::config("step_period", "must be at least 4 frames"));
        }
        if !(self.hip_height.is_finite() && self.hip_height > 0.0) {
            return Err(Error::config("hip_height", "must be positive"));
        }
        if !(self.step_length.is_finite() && self.step_length >= 0.0) {
            return Err(Error::config("step_length", "must be non-negative"));
        }
        if !self.arm_swing.is_finite() || !self.turning_rate.is_finite() {
            return Err(Error::config("arm_swing/turning_rate", "must be finite"));
        }
        if self.len < 2 * self.step_period {
            return Err(Error::config(
                "len",
                format!("must be at least two step periods ({})", 2 * self.step_period),
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::config("fps", "must be positive"));
        }
        Ok(())
    }

    /// A random variation of `self` for corpus generation.
    pub fn randomized(&self, rng: &mut impl Rng) -> GaitSpec {
        GaitSpec {
            step_length: rng.random_range(0.25..0.38),
            step_period: rng.random_range(13..=18),
            hip_height: rng.random_range(0.83..0.87),
            arm_swing: rng.random_range(0.2..0.5),
            turning_rate: rng.random_range(-0.008..0.008),
            seed: rng.random(),
            ..self.clone()
        }
    }
}

/// Per-leg chain in the built-in joint order.
struct Leg {
    hip: usize,
    knee: usize,
    ankle: usize,
    toe: usize,
    side: f64,
}

const LEGS: [Leg; 2] = [
    Leg {
        hip: smpl::LEFT_HIP,
        knee: smpl::LEFT_KNEE,
        ankle: smpl::LEFT_ANKLE,
        toe: smpl::LEFT_FOOT,
        side: 1.0,
    },
    Leg {
        hip: smpl::RIGHT_HIP,
        knee: smpl::RIGHT_KNEE,
        ankle: smpl::RIGHT_ANKLE,
        toe: smpl::RIGHT_FOOT,
        side: -1.0,
    },
];

const SWING_FRACTION: f64 = 0.8;
const TOE_CLEARANCE: f64 = 0.02;
const FOOT_LIFT: f64 = 0.12;
const SWING_CLEARANCE: f64 = 0.1;
const STANCE_WIDTH: f64 = 0.08;
const MAX_REACH: f64 = 0.995;

fn smootherstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

fn check_topology(skeleton: &Skeleton) -> Result<()> {
    skeleton.validate()?;
    let chains: [(usize, usize); 14] = [
        (4, 1),
        (7, 4),
        (10, 7),
        (5, 2),
        (8, 5),
        (11, 8),
        (16, 13),
        (18, 16),
        (20, 18),
        (17, 14),
        (19, 17),
        (21, 19),
        (1, 0),
        (2, 0),
    ];
    for (child, parent) in chains {
        if skeleton.parents[child] != Some(parent) {
            return Err(Error::Generation(format!(
                "gait generator needs the built-in joint order (joint {child} must hang from {parent})"
            )));
        }
    }
    Ok(())
}

/// Rotation taking the rest bone direction `rest` to `target`, with the bend
/// axis `normal` kept as the bone frame's x axis.
fn bone_rotation(rest: Vector3<f64>, target: Vector3<f64>, normal: Vector3<f64>) -> Matrix3<f64> {
    let frame = |dir: Vector3<f64>, x: Vector3<f64>| {
        let y = -dir;
        Matrix3::from_columns(&[x, y, x.cross(&y)])
    };
    let rest = rest.normalize();
    let rest_x = Vector3::z().cross(&rest).normalize();
    frame(target.normalize(), normal) * frame(rest, rest_x).transpose()
}

/// Analytic two-bone IK in the root heading frame. Returns the global
/// rotations of the hip and knee joints.
fn two_bone_ik(
    skeleton: &Skeleton,
    leg: &Leg,
    target: Vector3<f64>,
    pole: Vector3<f64>,
    frame: usize,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let hip = skeleton.offsets[leg.hip];
    let thigh = skeleton.offsets[leg.knee];
    let shin = skeleton.offsets[leg.ankle];
    let (l1, l2) = (thigh.norm(), shin.norm());
    let d = target - hip;
    let dist = d.norm();
    if dist > MAX_REACH * (l1 + l2) || dist < (l1 - l2).abs() + 1e-6 {
        return Err(Error::Generation(format!(
            "frame {frame}: foot target {dist:.3} m from the hip is outside the leg's reach ({:.3} m)",
            l1 + l2
        )));
    }
    let dn = d / dist;
    let p = pole - dn * dn.dot(&pole);
    if p.norm() < 1e-9 {
        return Err(Error::Generation(format!("frame {frame}: knee pole is parallel to the leg")));
    }
    let p = p.normalize();
    let cos_a = ((l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist)).clamp(-1.0, 1.0);
    let knee = hip + l1 * (cos_a * dn + (1.0 - cos_a * cos_a).sqrt() * p);
    let normal = p.cross(&dn).normalize();
    let g_hip = bone_rotation(thigh, knee - hip, normal);
    let g_knee = bone_rotation(shin, target - knee, normal);
    Ok((g_hip, g_knee))
}

/// Foot placements along an extended root track.
struct Track {
    pre: usize,
    yaw: Vec<f64>,
    pos: Vec<Vector3<f64>>,
}

impl Track {
    fn at(&self, frame: f64) -> (f64, Vector3<f64>) {
        let idx = (frame.round() + self.pre as f64).clamp(0.0, (self.yaw.len() - 1) as f64) as usize;
        (self.yaw[idx], self.pos[idx])
    }
}

/// World ankle position and foot yaw of one leg at frame `t`.
fn foot_state(
    track: &Track,
    t: usize,
    offset: f64,
    period: f64,
    side: f64,
    ankle_height: f64,
    lift: f64,
) -> (Vector3<f64>, f64) {
    let cycle = 2.0 * period;
    let swing = (SWING_FRACTION * period).round().max(2.0);
    let tau = t as f64 + offset;
    let c = (tau / cycle).floor();
    let phi = tau - c * cycle;
    let foothold = |c: f64| {
        let mid = c * cycle + 0.5 * (swing + cycle) - offset;
        let (yaw, pos) = track.at(mid);
        let p = pos + yaw_matrix(yaw) * Vector3::new(side * STANCE_WIDTH, 0.0, 0.0);
        (Vector3::new(p.x, ankle_height, p.z), yaw)
    };
    let (here, yaw_here) = foothold(c);
    if phi >= swing {
        return (here, yaw_here);
    }
    let (prev, yaw_prev) = foothold(c - 1.0);
    let u = phi / swing;
    // horizontal travel only once the foot has cleared the ground
    let s = smootherstep((u - SWING_CLEARANCE) / (1.0 - 2.0 * SWING_CLEARANCE));
    let mut p = prev + (here - prev) * s;
    p.y = ankle_height + lift * (std::f64::consts::PI * u).sin();
    (p, yaw_prev + (yaw_here - yaw_prev) * s)
}

/// Generates a clean walking sequence with pinned stance feet.
pub fn generate_clean(spec: &GaitSpec, skeleton: &Skeleton) -> Result<MotionSequence> {
    spec.validate()?;
    check_topology(skeleton)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let period = spec.step_period as f64;
    let cycle = 2.0 * period;
    let idle = spec.step_length == 0.0 && spec.turning_rate == 0.0;
    let speed = spec.step_length / period;
    let offset = rng.random_range(0.0..cycle);
    let (bob, sway) = if idle { (0.0, 0.0) } else { (0.01, 0.04 * spec.step_length) };
    let lift = if idle { 0.0 } else { FOOT_LIFT };
    let upper_phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let theta = |t: f64| std::f64::consts::PI * (t + offset) / period;

    // Root rates; frame 0 carries no motion.
    let len = spec.len;
    let lateral = |t: f64| sway * (theta(t) - std::f64::consts::FRAC_PI_2).sin();
    let rates = |t: f64| [spec.turning_rate, lateral(t) - lateral(t - 1.0), speed];
    let mut root = Array2::zeros((len, 4));
    for t in 0..len {
        let tf = t as f64;
        if t > 0 {
            let r = rates(tf);
            root[[t, 0]] = r[0];
            root[[t, 1]] = r[1];
            root[[t, 2]] = r[2];
        }
        root[[t, 3]] = spec.hip_height + bob * (2.0 * theta(tf)).cos();
    }

    // Extended track covering footholds before and after the window, in the
    // window's frame (frame 0 at the origin, zero heading).
    let pre = (2.0 * cycle) as usize + 2;
    let mut track = Track {
        pre,
        yaw: vec![0.0; len + 2 * pre],
        pos: vec![Vector3::zeros(); len + 2 * pre],
    };
    for e in pre + 1..track.yaw.len() {
        let r = rates(e as f64 - pre as f64);
        track.yaw[e] = track.yaw[e - 1] + r[0];
        track.pos[e] = track.pos[e - 1] + yaw_matrix(track.yaw[e]) * Vector3::new(r[1], 0.0, r[2]);
    }
    for e in (0..pre).rev() {
        let r = rates(e as f64 + 1.0 - pre as f64);
        track.pos[e] = track.pos[e + 1] - yaw_matrix(track.yaw[e + 1]) * Vector3::new(r[1], 0.0, r[2]);
        track.yaw[e] = track.yaw[e + 1] - r[0];
    }

    let traj = integrate_root(root.view())?;
    let toe_offset = skeleton.offsets[LEGS[0].toe];
    let ankle_height = TOE_CLEARANCE - toe_offset.y;
    let mut rot = Array3::zeros((len, NUM_JOINTS - 1, 6));
    let mut global = Array3::zeros((len, NUM_JOINTS, 3));
    for t in 0..len {
        let heading = traj.heading(t);
        let origin = traj.position(t);
        let th = theta(t as f64);
        let mut local = vec![Matrix3::identity(); NUM_JOINTS];

        for (k, leg) in LEGS.iter().enumerate() {
            let (ankle, foot_yaw) = foot_state(
                &track,
                t,
                offset + k as f64 * period,
                period,
                leg.side,
                ankle_height,
                lift,
            );
            let target = heading.transpose() * (ankle - origin);
            let foot = yaw_matrix(foot_yaw - traj.yaw[t]);
            let (g_hip, g_knee) = two_bone_ik(skeleton, leg, target, foot * Vector3::z(), t)?;
            local[leg.hip] = g_hip;
            local[leg.knee] = g_hip.transpose() * g_knee;
            local[leg.ankle] = g_knee.transpose() * foot;
        }

        let arm = spec.arm_swing * th.sin();
        local[3] = yaw_matrix(-0.08 * th.sin());
        local[6] = axis_angle(Vector3::x(), 0.03) * yaw_matrix(0.04 * th.sin());
        local[12] = axis_angle(Vector3::x(), 0.05 * (2.0 * th + upper_phase[0]).sin());
        local[15] = yaw_matrix(0.1 * (th / 3.0 + upper_phase[1]).sin());
        local[smpl::LEFT_SHOULDER] = axis_angle(Vector3::x(), arm) * axis_angle(Vector3::z(), -1.37);
        local[smpl::RIGHT_SHOULDER] = axis_angle(Vector3::x(), -arm) * axis_angle(Vector3::z(), 1.37);
        local[smpl::LEFT_ELBOW] = axis_angle(Vector3::y(), 0.3 + 0.1 * th.sin());
        local[smpl::RIGHT_ELBOW] = axis_angle(Vector3::y(), -0.3 + 0.1 * th.sin());
        local[20] = axis_angle(Vector3::z(), 0.1 * (th + upper_phase[2]).sin());
        local[21] = axis_angle(Vector3::z(), -0.1 * (th + upper_phase[2]).sin());

        for j in 1..NUM_JOINTS {
            for (c, v) in matrix_to_rot6d(&local[j]).iter().enumerate() {
                rot[[t, j - 1, c]] = *v;
            }
        }
        let frame = fk_frame(rot.index_axis(ndarray::Axis(0), t), skeleton)?;
        for j in 0..NUM_JOINTS {
            let p = heading * frame.positions[j] + origin;
            for c in 0..3 {
                global[[t, j, c]] = p[c];
            }
        }
    }
    encode_motion(root, &GlobalPositions::new(global)?, rot, spec.fps)
}

/// `n` clean sequences with randomized gaits derived from `base` and `seed`.
pub fn clean_corpus(n: usize, base: &GaitSpec, seed: u64, skeleton: &Skeleton) -> Result<Vec<MotionSequence>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_clean(&base.randomized(&mut rng), skeleton)
        })
        .collect()
}
