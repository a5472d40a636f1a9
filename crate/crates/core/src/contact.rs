//! Foot–ground contact detection and motion-quality metrics.

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::features::{POS_DIM, POS_OFFSET, ROOT_OFFSET};
use crate::motion::{GlobalPositions, MotionSequence, Skeleton};

/// Contact thresholds: squared per-frame displacement `v_th` (m^2) and the
/// toe/ankle height gates (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactThresholds {
    pub v_th: f64,
    pub h_toe: f64,
    pub h_ankle: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        ContactThresholds {
            v_th: 0.001,
            h_toe: 0.05,
            h_ankle: 0.08,
        }
    }
}

impl ContactThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_th", self.v_th), ("h_toe", self.h_toe), ("h_ankle", self.h_ankle)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A foot joint together with the height under which it counts as grounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootJoint {
    pub index: usize,
    pub height_threshold: f64,
}

impl Skeleton {
    pub fn foot_joints(&self, thresholds: &ContactThresholds) -> Vec<FootJoint> {
        self.feet
            .iter()
            .map(|&j| FootJoint {
                index: j,
                height_threshold: self.height_threshold(j, thresholds.h_toe, thresholds.h_ankle),
            })
            .collect()
    }
}

/// Binary contact indicators, one column per foot joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMask {
    mask: Array2<u8>,
    feet: Vec<FootJoint>,
    v_th: f64,
}

impl ContactMask {
    /// Builds a mask from explicit values; entries must be 0 or 1.
    pub fn from_values(mask: Array2<u8>, feet: Vec<FootJoint>, v_th: f64) -> Result<Self> {
        if mask.ncols() != feet.len() {
            return Err(Error::Shape(format!(
                "mask has {} columns for {} foot joints",
                mask.ncols(),
                feet.len()
            )));
        }
        if mask.iter().any(|&b| b > 1) {
            return Err(Error::Shape("contact mask entries must be 0 or 1".into()));
        }
        Ok(ContactMask { mask, feet, v_th })
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.mask
    }

    pub fn feet(&self) -> &[FootJoint] {
        &self.feet
    }

    pub fn v_th(&self) -> f64 {
        self.v_th
    }

    pub fn len(&self) -> usize {
        self.mask.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.nrows() == 0
    }

    pub fn get(&self, frame: usize, foot: usize) -> bool {
        self.mask[[frame, foot]] == 1
    }

    /// Fraction of (frame, foot) entries in contact.
    pub fn contact_fraction(&self) -> f64 {
        let n = self.mask.len().max(1);
        self.mask.iter().map(|&b| b as f64).sum::<f64>() / n as f64
    }
}

/// Forward displacement of joint `j` at frame `i`; the last frame reuses the
/// previous displacement.
fn forward_step(p: &GlobalPositions, i: usize, j: usize) -> nalgebra::Vector3<f64> {
    let len = p.len();
    let i = if i + 1 >= len { len - 2 } else { i };
    p.joint(i + 1, j) - p.joint(i, j)
}

/// Per-frame contact: slow (`|P[i+1]-P[i]|^2 < v_th`) and low (`y < H_th`).
pub fn detect_contact(p: &GlobalPositions, feet: &[FootJoint], v_th: f64) -> Result<ContactMask> {
    if feet.is_empty() {
        return Err(Error::config("feet", "foot joint set is empty"));
    }
    if !(v_th > 0.0) || feet.iter().any(|f| !(f.height_threshold > 0.0)) {
        return Err(Error::config("thresholds", "contact thresholds must be positive"));
    }
    if p.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "contact detection needs at least 2 frames, got {}",
            p.len()
        )));
    }
    if let Some(f) = feet.iter().find(|f| f.index >= p.num_joints()) {
        return Err(Error::config("feet", format!("joint {} out of range", f.index)));
    }
    let mask = Array2::from_shape_fn((p.len(), feet.len()), |(i, k)| {
        let foot = feet[k];
        let slow = forward_step(p, i, foot.index).norm_squared() < v_th;
        let low = p.height(i, foot.index) < foot.height_threshold;
        u8::from(slow && low)
    });
    Ok(ContactMask {
        mask,
        feet: feet.to_vec(),
        v_th,
    })
}

/// Contact mask of a feature sequence using the skeleton's foot joints.
pub fn detect_contact_motion(
    m: &MotionSequence,
    skeleton: &Skeleton,
    thresholds: &ContactThresholds,
) -> Result<ContactMask> {
    thresholds.validate()?;
    detect_contact(&m.global_positions(), &skeleton.foot_joints(thresholds), thresholds.v_th)
}

/// Denominator of the foot skating ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsrNormalization {
    #[default]
    TotalFrames,
    GroundedFrames,
}

/// Foot skating ratio settings. `slide_threshold` is a horizontal displacement
/// in meters per 1/30 s; it is rescaled for other frame rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsrConfig {
    pub slide_threshold: f64,
    pub normalization: FsrNormalization,
}

impl Default for FsrConfig {
    fn default() -> Self {
        FsrConfig {
            slide_threshold: 0.025,
            normalization: FsrNormalization::TotalFrames,
        }
    }
}

const FSR_REFERENCE_FPS: f64 = 30.0;

/// Per-frame skating flags: some foot joint is below its height gate and
/// moves horizontally more than the slide threshold.
pub fn skating_frames(p: &GlobalPositions, mask: &ContactMask, fps: f64, cfg: &FsrConfig) -> Result<Vec<bool>> {
    if p.is_empty() {
        return Err(Error::EmptyInput("foot skating ratio of an empty sequence".into()));
    }
    if mask.len() != p.len() {
        return Err(Error::Shape(format!(
            "contact mask has {} frames, positions have {}",
            mask.len(),
            p.len()
        )));
    }
    if !(fps > 0.0) || !(cfg.slide_threshold >= 0.0) {
        return Err(Error::config("slide_threshold", "fps and slide threshold must be positive"));
    }
    if p.len() < 2 {
        return Ok(vec![false; p.len()]);
    }
    let threshold = cfg.slide_threshold * FSR_REFERENCE_FPS / fps;
    Ok((0..p.len())
        .map(|i| {
            mask.feet().iter().any(|f| {
                let d = forward_step(p, i, f.index);
                p.height(i, f.index) < f.height_threshold && d.x.hypot(d.z) > threshold
            })
        })
        .collect())
}

/// Foot skating ratio in `[0, 1]`.
pub fn foot_skating_ratio(p: &GlobalPositions, mask: &ContactMask, fps: f64, cfg: &FsrConfig) -> Result<f64> {
    let flags = skating_frames(p, mask, fps, cfg)?;
    let skating = flags.iter().filter(|&&b| b).count();
    let denom = match cfg.normalization {
        FsrNormalization::TotalFrames => p.len(),
        FsrNormalization::GroundedFrames => (0..p.len())
            .filter(|&i| mask.feet().iter().any(|f| p.height(i, f.index) < f.height_threshold))
            .count(),
    };
    Ok(if denom == 0 { 0.0 } else { skating as f64 / denom as f64 })
}

/// Mean jerk magnitude over frames and joints, in 10^3 m/s^3.
pub fn jitter(p: &GlobalPositions, fps: f64) -> Result<f64> {
    let len = p.len();
    if len < 4 {
        return Err(Error::EmptyInput(format!("jitter needs at least 4 frames, got {len}")));
    }
    if !(fps > 0.0) {
        return Err(Error::config("fps", "must be positive"));
    }
    let joints = p.num_joints();
    let mut total = 0.0;
    for t in 0..len - 3 {
        for j in 0..joints {
            let jerk = p.joint(t + 3, j) - 3.0 * p.joint(t + 2, j) + 3.0 * p.joint(t + 1, j) - p.joint(t, j);
            total += jerk.norm();
        }
    }
    Ok(total / ((len - 3) * joints) as f64 * fps.powi(3) / 1e3)
}

/// Fraction of frames whose lowest joint is more than `margin` below the ground.
pub fn penetration_rate(p: &GlobalPositions, margin: f64) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let hits = (0..p.len())
        .filter(|&t| (0..p.num_joints()).any(|j| p.height(t, j) < -margin))
        .count();
    hits as f64 / p.len() as f64
}

/// Centered moving average over root, velocity and position features;
/// rotations are left untouched. Edges replicate the boundary frame.
pub fn smooth_baseline(m: &MotionSequence, window: usize) -> Result<MotionSequence> {
    let len = m.len();
    if window < 3 || window.is_multiple_of(2) || window > len {
        return Err(Error::Window { window, len });
    }
    let half = (window / 2) as isize;
    let src = m.frames();
    let mut out = src.clone();
    // root, velocity and position blocks are contiguous
    let cols = ROOT_OFFSET..POS_OFFSET + POS_DIM;
    for t in 0..len as isize {
        let mut acc = ndarray::Array1::<f64>::zeros(cols.len());
        for k in -half..=half {
            let idx = (t + k).clamp(0, len as isize - 1) as usize;
            acc += &src.slice(s![idx, cols.clone()]);
        }
        acc /= window as f64;
        out.slice_mut(s![t as usize, cols.clone()]).assign(&acc);
    }
    MotionSequence::new(out, m.fps())
}

/// All metric settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub contact: ContactThresholds,
    pub fsr: FsrConfig,
    pub penetration_margin: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            contact: ContactThresholds::default(),
            fsr: FsrConfig::default(),
            penetration_margin: 0.01,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.contact.validate()?;
        if !(self.fsr.slide_threshold.is_finite() && self.fsr.slide_threshold > 0.0) {
            return Err(Error::config("fsr.slide_threshold", "must be positive"));
        }
        if !(self.penetration_margin >= 0.0) {
            return Err(Error::config("penetration_margin", "must be non-negative"));
        }
        Ok(())
    }
}

/// Quality metrics of one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub fsr: f64,
    pub jitter: f64,
    pub penetration: f64,
}

impl QualityReport {
    pub fn evaluate(m: &MotionSequence, skeleton: &Skeleton, cfg: &MetricsConfig) -> Result<Self> {
        cfg.validate()?;
        let p = m.global_positions();
        Self::evaluate_positions(&p, m.fps(), skeleton, cfg)
    }

    pub fn evaluate_positions(
        p: &GlobalPositions,
        fps: f64,
        skeleton: &Skeleton,
        cfg: &MetricsConfig,
    ) -> Result<Self> {
        let mask = detect_contact(p, &skeleton.foot_joints(&cfg.contact), cfg.contact.v_th)?;
        Ok(QualityReport {
            fsr: foot_skating_ratio(p, &mask, fps, &cfg.fsr)?,
            jitter: jitter(p, fps)?,
            penetration: penetration_rate(p, cfg.penetration_margin),
        })
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[QualityReport]) -> Option<QualityReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(QualityReport {
            fsr: reports.iter().map(|r| r.fsr).sum::<f64>() / n,
            jitter: reports.iter().map(|r| r.jitter).sum::<f64>() / n,
            penetration: reports.iter().map(|r| r.penetration).sum::<f64>() / n,
        })
    }
}

/// Per-sequence reports with their corpus mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub sequences: Vec<NamedReport>,
    pub mean: QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    #[serde(flatten)]
    pub report: QualityReport,
}

impl CorpusReport {
    /// Evaluates sequences in parallel; the output order follows the input.
    pub fn evaluate<'a, I>(items: I, skeleton: &Skeleton, cfg: &MetricsConfig) -> Result<Self>
    where
        I: IntoParallelIterator<Item = (&'a str, &'a MotionSequence)>,
        I::Iter: IndexedParallelIterator,
    {
        let sequences = items
            .into_par_iter()
            .map(|(name, m)| {
                Ok(NamedReport {
                    name: name.to_string(),
                    report: QualityReport::evaluate(m, skeleton, cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let reports: Vec<_> = sequences.iter().map(|s| s.report).collect();
        let mean = QualityReport::mean(&reports)
            .ok_or_else(|| Error::EmptyInput("no sequences to evaluate".into()))?;
        Ok(CorpusReport { sequences, mean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn positions(len: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> GlobalPositions {
        let mut a = Array3::zeros((len, 22, 3));
        for t in 0..len {
            for j in 0..22 {
                let v = f(t, j);
                for c in 0..3 {
                    a[[t, j, c]] = v[c];
                }
            }
        }
        GlobalPositions::new(a).unwrap()
    }

    fn toe_only() -> Vec<FootJoint> {
        vec![FootJoint { index: 10, height_threshold: 0.05 }]
    }

    #[test]
    fn stationary_low_toe_is_in_contact() {
        let p = positions(5, |_, j| if j == 10 { [0.0, 0.03, 0.0] } else { [0.0, 1.0, 0.0] });
        let m = detect_contact(&p, &toe_only(), 0.001).unwrap();
        assert!(m.values().iter().all(|&b| b == 1));
    }

    #[test]
    fn high_toe_is_never_in_contact() {
        let p = positions(5, |_, j| if j == 10 { [0.0, 0.2, 0.0] } else { [0.0, 1.0, 0.0] });
        let m = detect_contact(&p, &toe_only(), 0.001).unwrap();
        assert!(m.values().iter().all(|&b| b == 0));
    }

    #[test]
    fn fast_low_toe_is_not_in_contact() {
        // 0.05 per frame: squared displacement 0.0025 >= 0.001
        let p = positions(5, |t, j| if j == 10 { [0.05 * t as f64, 0.03, 0.0] } else { [0.0, 1.0, 0.0] });
        let m = detect_contact(&p, &toe_only(), 0.001).unwrap();
        assert!(m.values().iter().all(|&b| b == 0));
    }

    #[test]
    fn last_frame_reuses_previous_step() {
        let p = positions(4, |t, j| {
            if j == 10 {
                [if t == 3 { 0.5 } else { 0.0 }, 0.03, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            }
        });
        let m = detect_contact(&p, &toe_only(), 0.001).unwrap();
        assert_eq!(m.values().column(0).to_vec(), vec![1, 1, 0, 0]);
    }

    #[test]
    fn empty_foot_set_is_config_error() {
        let p = positions(3, |_, _| [0.0; 3]);
        assert!(matches!(detect_contact(&p, &[], 0.001), Err(Error::Config { .. })));
    }

    #[test]
    fn jitter_zero_for_constant_velocity_and_acceleration() {
        let lin = positions(10, |t, j| [0.1 * t as f64, j as f64, 0.0]);
        assert!(jitter(&lin, 30.0).unwrap().abs() < 1e-9);
        let quad = positions(10, |t, _| {
            let t = t as f64 / 30.0;
            [0.5 * 9.81 * t * t, 0.0, 0.0]
        });
        assert!(jitter(&quad, 30.0).unwrap().abs() < 1e-8);
        assert!(jitter(&positions(3, |_, _| [0.0; 3]), 30.0).is_err());
    }

    #[test]
    fn jitter_is_translation_invariant() {
        let base = positions(12, |t, j| [((t * j) as f64).sin(), (t as f64).cos(), 0.3 * j as f64]);
        let shifted = positions(12, |t, j| [((t * j) as f64).sin() + 5.0, (t as f64).cos() - 2.0, 0.3 * j as f64 + 1.0]);
        let (a, b) = (jitter(&base, 30.0).unwrap(), jitter(&shifted, 30.0).unwrap());
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn penetration_examples() {
        let above = positions(100, |_, _| [0.0, 0.1, 0.0]);
        assert_eq!(penetration_rate(&above, 0.01), 0.0);
        let dipped = positions(100, |t, j| [0.0, if j == 10 && t % 33 == 5 { -0.02 } else { 0.1 }, 0.0]);
        assert!((penetration_rate(&dipped, 0.01) - 0.03).abs() < 1e-12);
        assert_eq!(penetration_rate(&dipped, f64::INFINITY), 0.0);
    }

    #[test]
    fn smoothing_fixed_point_and_impulse() {
        let mut frames = Array2::from_elem((9, 259), 0.25);
        let m = MotionSequence::new(frames.clone(), 30.0).unwrap();
        assert_eq!(smooth_baseline(&m, 3).unwrap(), m);

        frames.fill(0.0);
        frames[[4, 80]] = 3.0;
        frames[[4, 200]] = 3.0; // rotation column, untouched
        let out = smooth_baseline(&MotionSequence::new(frames, 30.0).unwrap(), 3).unwrap();
        let col: Vec<f64> = out.frames().column(80).to_vec();
        assert_eq!(col, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(out.frames()[[4, 200]], 3.0);
    }

    #[test]
    fn smoothing_window_errors() {
        let m = MotionSequence::zeros(4, 30.0).unwrap();
        assert!(matches!(smooth_baseline(&m, 5), Err(Error::Window { .. })));
        assert!(smooth_baseline(&m, 2).is_err());
        assert!(smooth_baseline(&m, 1).is_err());
    }
}
