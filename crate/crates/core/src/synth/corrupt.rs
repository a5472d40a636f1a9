//! Artifact injection with exact ground-truth labels.
//!
//! Artifacts are world-space displacements of joints (skating drift, jitter)
//! plus a root height offset (floating, penetration). The corrupted sequence is
//! re-encoded from the displaced positions, so its features stay internally
//! consistent; subtracting the labeled displacements restores the input.

use nalgebra::Vector3;
use ndarray::{Array1, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contact::{detect_contact, ContactThresholds};
use crate::error::{Error, Result};
use crate::motion::features::NUM_JOINTS;
use crate::motion::skeleton::smpl;
use crate::motion::{encode_motion, GlobalPositions, MotionSequence, Skeleton};

/// Sliding of planted feet: `fraction` of the frames get a horizontal drift of
/// `drift` meters per frame on one planted foot, in runs of at most `max_run`
/// frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkateSpec {
    pub fraction: f64,
    pub drift: f64,
    pub max_run: usize,
}

impl Default for SkateSpec {
    fn default() -> Self {
        SkateSpec {
            fraction: 0.0,
            drift: 0.03,
            max_run: 8,
        }
    }
}

/// White positional noise of standard deviation `sigma` meters on `joints`
/// (the skeleton's knee/foot joints when empty).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSpec {
    pub sigma: f64,
    pub joints: Vec<usize>,
}

/// Smooth root-height bumps of `magnitude` meters covering about `fraction`
/// of the frames.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSpec {
    pub magnitude: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactSpec {
    pub skate: SkateSpec,
    pub jitter: JitterSpec,
    pub float: SegmentSpec,
    pub penetrate: SegmentSpec,
    pub seed: u64,
}

impl ArtifactSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("skate.fraction", self.skate.fraction),
            ("float.fraction", self.float.fraction),
            ("penetrate.fraction", self.penetrate.fraction),
        ];
        for (field, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        let amounts = [
            ("skate.drift", self.skate.drift),
            ("jitter.sigma", self.jitter.sigma),
            ("float.magnitude", self.float.magnitude),
            ("penetrate.magnitude", self.penetrate.magnitude),
        ];
        for (field, v) in amounts {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be non-negative, got {v}")));
            }
        }
        if self.skate.max_run == 0 {
            return Err(Error::config("skate.max_run", "must be at least 1"));
        }
        if let Some(j) = self.jitter.joints.iter().find(|&&j| j >= NUM_JOINTS) {
            return Err(Error::config("jitter.joints", format!("joint {j} out of range")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        (self.skate.fraction == 0.0 || self.skate.drift == 0.0)
            && self.jitter.sigma == 0.0
            && (self.float.fraction == 0.0 || self.float.magnitude == 0.0)
            && (self.penetrate.fraction == 0.0 || self.penetrate.magnitude == 0.0)
    }
}

/// Exact record of what [`corrupt`] changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactLabels {
    /// Frames `i` whose displacement to `i + 1` carries skating drift.
    pub skate_frames: Vec<usize>,
    pub jitter_frames: Vec<usize>,
    pub float_frames: Vec<usize>,
    pub penetrate_frames: Vec<usize>,
    /// World-space joint displacements, frame-major.
    pub joint_offsets: Vec<[[f64; 3]; NUM_JOINTS]>,
    /// Root height offsets per frame (shift the whole body).
    pub height_offsets: Vec<f64>,
}

impl ArtifactLabels {
    fn zeros(len: usize) -> Self {
        ArtifactLabels {
            skate_frames: Vec::new(),
            jitter_frames: Vec::new(),
            float_frames: Vec::new(),
            penetrate_frames: Vec::new(),
            joint_offsets: vec![[[0.0; 3]; NUM_JOINTS]; len],
            height_offsets: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.height_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.height_offsets.is_empty()
    }

    fn add(&mut self, t: usize, j: usize, v: &Vector3<f64>) {
        for c in 0..3 {
            self.joint_offsets[t][j][c] += v[c];
        }
    }

    /// Removes the labeled perturbations from a corrupted sequence.
    pub fn remove(&self, corrupted: &MotionSequence) -> Result<MotionSequence> {
        self.apply(corrupted, -1.0)
    }

    fn apply(&self, m: &MotionSequence, sign: f64) -> Result<MotionSequence> {
        if m.len() != self.len() || self.joint_offsets.len() != self.len() {
            return Err(Error::Shape(format!(
                "labels cover {} frames, motion has {}",
                self.len(),
                m.len()
            )));
        }
        let blocks = m.split();
        let mut global = m.global_positions().into_inner();
        let mut root = blocks.root;
        for t in 0..m.len() {
            let dh = sign * self.height_offsets[t];
            root[[t, 3]] += dh;
            for j in 0..NUM_JOINTS {
                for c in 0..3 {
                    global[[t, j, c]] += sign * self.joint_offsets[t][j][c];
                }
                global[[t, j, 1]] += dh;
            }
        }
        encode_motion(root, &GlobalPositions::new(global)?, blocks.rot, m.fps())
    }
}

struct LegJoints {
    knee: usize,
    ankle: usize,
    toe: usize,
}

const LEGS: [LegJoints; 2] = [
    LegJoints {
        knee: smpl::LEFT_KNEE,
        ankle: smpl::LEFT_ANKLE,
        toe: smpl::LEFT_FOOT,
    },
    LegJoints {
        knee: smpl::RIGHT_KNEE,
        ankle: smpl::RIGHT_ANKLE,
        toe: smpl::RIGHT_FOOT,
    },
];

fn smootherstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Maximal runs `[start, end]` of `true`.
fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

fn inject_skating(
    labels: &mut ArtifactLabels,
    planted: &[Vec<bool>; 2],
    spec: &SkateSpec,
    rng: &mut ChaCha8Rng,
) {
    let len = labels.len();
    let target = (spec.fraction * len as f64).round() as usize;
    if target == 0 || spec.drift == 0.0 {
        return;
    }
    let mut candidates: Vec<(usize, usize, usize)> = (0..2)
        .flat_map(|leg| runs(&planted[leg]).into_iter().map(move |(s, e)| (leg, s, e)))
        .filter(|&(_, s, e)| e > s)
        .collect();
    candidates.shuffle(rng);

    let mut used = vec![false; len];
    let mut drift: [Vec<Option<Vector3<f64>>>; 2] = [vec![None; len], vec![None; len]];
    let mut count = 0;
    for (leg, s, e) in candidates {
        if count >= target {
            break;
        }
        let m = (e - s).min(spec.max_run).min(target - count);
        let start = rng.random_range(s..=e - m);
        if used[start..start + m].iter().any(|&u| u) {
            continue;
        }
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let step = Vector3::new(angle.cos(), 0.0, angle.sin()) * spec.drift;
        for i in start..start + m {
            used[i] = true;
            drift[leg][i] = Some(step);
        }
        count += m;
    }
    labels.skate_frames = (0..len).filter(|&i| used[i]).collect();

    // Accumulate the drift, hold it for the rest of the stance and fade it out
    // over the following swing.
    for (leg, joints) in LEGS.iter().enumerate() {
        let stance = runs(&planted[leg]);
        let mut offset = vec![Vector3::zeros(); len];
        for t in 1..len {
            offset[t] = offset[t - 1] + drift[leg][t - 1].unwrap_or_else(Vector3::zeros);
        }
        for (k, &(_, end)) in stance.iter().enumerate() {
            let held = offset[end];
            if held == Vector3::zeros() {
                continue;
            }
            let next = stance.get(k + 1).map_or(len, |r| r.0);
            let span = (next - end) as f64;
            for (t, o) in offset.iter_mut().enumerate().take(len).skip(end + 1) {
                *o -= if t < next {
                    held * smootherstep((t - end) as f64 / span)
                } else {
                    held
                };
            }
        }
        for (t, o) in offset.iter().enumerate() {
            labels.add(t, joints.ankle, o);
            labels.add(t, joints.toe, o);
            labels.add(t, joints.knee, &(0.5 * o));
        }
    }
}

/// Raised-cosine bumps of height `magnitude` covering about `fraction` of the
/// frames; returns the frames touched.
fn height_bumps(heights: &mut [f64], spec: &SegmentSpec, sign: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = heights.len();
    let target = (spec.fraction * len as f64).round() as usize;
    if target == 0 || spec.magnitude == 0.0 {
        return Vec::new();
    }
    let mut touched = vec![false; len];
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 64 {
        attempts += 1;
        let width = rng.random_range(12..=32).min(len).min(target - covered + 2).max(3);
        let start = rng.random_range(0..=len - width);
        if touched[start..start + width].iter().any(|&u| u) {
            continue;
        }
        for k in 0..width {
            let u = (k + 1) as f64 / (width + 1) as f64;
            heights[start + k] += sign * spec.magnitude * 0.5 * (1.0 - (std::f64::consts::TAU * u).cos());
            touched[start + k] = true;
        }
        covered += width;
    }
    (0..len).filter(|&t| touched[t]).collect()
}

/// Injects the artifacts of `spec` into a clean sequence.
pub fn corrupt(
    m: &MotionSequence,
    spec: &ArtifactSpec,
    skeleton: &Skeleton,
    contact: &ContactThresholds,
) -> Result<(MotionSequence, ArtifactLabels)> {
    spec.validate()?;
    contact.validate()?;
    let len = m.len();
    let mut labels = ArtifactLabels::zeros(len);
    if spec.is_empty() {
        log::warn!("artifact spec is empty; returning the input unchanged");
        return Ok((m.clone(), labels));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let global = m.global_positions();
    let feet: Vec<_> = LEGS
        .iter()
        .flat_map(|l| [l.ankle, l.toe])
        .map(|j| crate::contact::FootJoint {
            index: j,
            height_threshold: skeleton.height_threshold(j, contact.h_toe, contact.h_ankle),
        })
        .collect();
    let mask = detect_contact(&global, &feet, contact.v_th)?;
    let planted: [Vec<bool>; 2] = std::array::from_fn(|leg| {
        (0..len)
            .map(|t| mask.get(t, 2 * leg) && mask.get(t, 2 * leg + 1))
            .collect()
    });
    inject_skating(&mut labels, &planted, &spec.skate, &mut rng);

    if spec.jitter.sigma > 0.0 {
        let joints = if spec.jitter.joints.is_empty() {
            skeleton.knee_feet.clone()
        } else {
            spec.jitter.joints.clone()
        };
        let normal = Normal::new(0.0, spec.jitter.sigma).expect("validated sigma");
        for t in 0..len {
            for &j in &joints {
                let noise = Vector3::from_fn(|_, _| normal.sample(&mut rng));
                labels.add(t, j, &noise);
            }
        }
        labels.jitter_frames = (0..len).collect();
    }

    let mut heights = vec![0.0; len];
    labels.float_frames = height_bumps(&mut heights, &spec.float, 1.0, &mut rng);
    labels.penetrate_frames = height_bumps(&mut heights, &spec.penetrate, -1.0, &mut rng);
    labels.height_offsets = heights;

    let out = labels.apply(m, 1.0)?;
    Ok((out, labels))
}

/// Fraction of frames labeled as skating.
pub fn labeled_skate_fraction(labels: &ArtifactLabels) -> f64 {
    labels.skate_frames.len() as f64 / labels.len().max(1) as f64
}

/// Dense per-frame copy of the joint offsets, `L x 22 x 3`.
pub fn offsets_array(labels: &ArtifactLabels) -> Array3<f64> {
    Array3::from_shape_fn((labels.len(), NUM_JOINTS, 3), |(t, j, c)| labels.joint_offsets[t][j][c])
}

pub fn heights_array(labels: &ArtifactLabels) -> Array1<f64> {
    Array1::from(labels.height_offsets.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{jitter, MetricsConfig, QualityReport};
    use crate::synth::gait::{generate_clean, GaitSpec};

    fn clean() -> (MotionSequence, Skeleton) {
        let skel = Skeleton::smpl();
        (generate_clean(&GaitSpec::default(), &skel).unwrap(), skel)
    }

    #[test]
    fn empty_spec_is_identity() {
        let (m, skel) = clean();
        let (out, labels) = corrupt(&m, &ArtifactSpec::default(), &skel, &ContactThresholds::default()).unwrap();
        assert_eq!(out, m);
        assert!(labels.skate_frames.is_empty());
    }

    #[test]
    fn planted_skating_is_measured() {
        let (m, skel) = clean();
        let spec = ArtifactSpec {
            skate: SkateSpec {
                fraction: 0.2,
                ..SkateSpec::default()
            },
            seed: 4,
            ..ArtifactSpec::default()
        };
        let (out, labels) = corrupt(&m, &spec, &skel, &ContactThresholds::default()).unwrap();
        let q = QualityReport::evaluate(&out, &skel, &MetricsConfig::default()).unwrap();
        assert!((labeled_skate_fraction(&labels) - 0.2).abs() < 0.01);
        assert!((q.fsr - 0.2).abs() <= 0.02, "fsr {}", q.fsr);
    }

    #[test]
    fn jitter_raises_jerk() {
        let (m, skel) = clean();
        let spec = ArtifactSpec {
            jitter: JitterSpec {
                sigma: 0.01,
                joints: vec![],
            },
            seed: 1,
            ..ArtifactSpec::default()
        };
        let (out, _) = corrupt(&m, &spec, &skel, &ContactThresholds::default()).unwrap();
        let before = jitter(&m.global_positions(), 30.0).unwrap();
        let after = jitter(&out.global_positions(), 30.0).unwrap();
        assert!(after > before);
    }

    #[test]
    fn labels_round_trip() {
        let (m, skel) = clean();
        let spec = ArtifactSpec {
            skate: SkateSpec {
                fraction: 0.25,
                ..SkateSpec::default()
            },
            jitter: JitterSpec {
                sigma: 0.005,
                joints: vec![],
            },
            float: SegmentSpec {
                magnitude: 0.05,
                fraction: 0.1,
            },
            penetrate: SegmentSpec {
                magnitude: 0.04,
                fraction: 0.1,
            },
            seed: 9,
        };
        let (out, labels) = corrupt(&m, &spec, &skel, &ContactThresholds::default()).unwrap();
        assert!(!labels.float_frames.is_empty() && !labels.penetrate_frames.is_empty());
        let back = labels.remove(&out).unwrap();
        let err = (back.frames() - m.frames()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn upper_body_untouched() {
        let (m, skel) = clean();
        let spec = ArtifactSpec {
            skate: SkateSpec {
                fraction: 0.2,
                ..SkateSpec::default()
            },
            jitter: JitterSpec {
                sigma: 0.003,
                joints: vec![],
            },
            seed: 2,
            ..ArtifactSpec::default()
        };
        let (out, _) = corrupt(&m, &spec, &skel, &ContactThresholds::default()).unwrap();
        let (a, b) = (m.global_positions(), out.global_positions());
        for t in 0..m.len() {
            for j in [0, 3, 6, 9, 12, 15, 16, 17, 18, 19, 20, 21] {
                assert!((a.joint(t, j) - b.joint(t, j)).norm() < 1e-9);
            }
        }
    }
}
