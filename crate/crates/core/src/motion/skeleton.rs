//! Kinematic tree description.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::motion::features::NUM_JOINTS;

/// A 22-joint kinematic tree in topological order.
///
/// `feet` are the joints tested for ground contact; `toes` is the subset of
/// `feet` that uses the toe height threshold (the rest use the ankle
/// threshold). `knee_feet` are the joints the restoration model is allowed to
/// modify, together with the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Vector3<f64>>,
    pub feet: Vec<usize>,
    pub toes: Vec<usize>,
    pub knee_feet: Vec<usize>,
}

pub mod smpl {
    pub const PELVIS: usize = 0;
    pub const LEFT_HIP: usize = 1;
    pub const RIGHT_HIP: usize = 2;
    pub const LEFT_KNEE: usize = 4;
    pub const RIGHT_KNEE: usize = 5;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;
    pub const LEFT_FOOT: usize = 10;
    pub const RIGHT_FOOT: usize = 11;
    pub const LEFT_SHOULDER: usize = 16;
    pub const RIGHT_SHOULDER: usize = 17;
    pub const LEFT_ELBOW: usize = 18;
    pub const RIGHT_ELBOW: usize = 19;

    pub const NAMES: [&str; 22] = [
        "pelvis",
        "left_hip",
        "right_hip",
        "spine1",
        "left_knee",
        "right_knee",
        "spine2",
        "left_ankle",
        "right_ankle",
        "spine3",
        "left_foot",
        "right_foot",
        "neck",
        "left_collar",
        "right_collar",
        "head",
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "left_wrist",
        "right_wrist",
    ];

    pub const PARENTS: [i32; 22] = [
        -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
    ];

    /// Rest offsets in meters; +X left, +Y up, +Z forward. Arms in T-pose.
    pub const OFFSETS: [[f64; 3]; 22] = [
        [0.0, 0.0, 0.0],
        [0.07, -0.09, 0.0],
        [-0.07, -0.09, 0.0],
        [0.0, 0.11, -0.01],
        [0.0, -0.38, 0.0],
        [0.0, -0.38, 0.0],
        [0.0, 0.13, 0.0],
        [0.0, -0.40, 0.0],
        [0.0, -0.40, 0.0],
        [0.0, 0.05, 0.02],
        [0.0, -0.05, 0.12],
        [0.0, -0.05, 0.12],
        [0.0, 0.21, -0.03],
        [0.07, 0.12, 0.0],
        [-0.07, 0.12, 0.0],
        [0.0, 0.09, 0.05],
        [0.11, 0.03, 0.0],
        [-0.11, 0.03, 0.0],
        [0.26, 0.0, 0.0],
        [-0.26, 0.0, 0.0],
        [0.25, 0.0, 0.0],
        [-0.25, 0.0, 0.0],
    ];
}

impl Skeleton {
    /// SMPL body ordering with `F = {7, 8, 10, 11}` and
    /// `KF = {4, 5, 7, 8, 10, 11}`.
    pub fn smpl() -> Self {
        Skeleton {
            names: smpl::NAMES.iter().map(|s| s.to_string()).collect(),
            parents: smpl::PARENTS
                .iter()
                .map(|&p| (p >= 0).then_some(p as usize))
                .collect(),
            offsets: smpl::OFFSETS
                .iter()
                .map(|o| Vector3::new(o[0], o[1], o[2]))
                .collect(),
            feet: vec![
                smpl::LEFT_ANKLE,
                smpl::RIGHT_ANKLE,
                smpl::LEFT_FOOT,
                smpl::RIGHT_FOOT,
            ],
            toes: vec![smpl::LEFT_FOOT, smpl::RIGHT_FOOT],
            knee_feet: vec![
                smpl::LEFT_KNEE,
                smpl::RIGHT_KNEE,
                smpl::LEFT_ANKLE,
                smpl::RIGHT_ANKLE,
                smpl::LEFT_FOOT,
                smpl::RIGHT_FOOT,
            ],
        }
        .validated()
        .expect("built-in skeleton is valid")
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if n != NUM_JOINTS || self.offsets.len() != n || self.names.len() != n {
            return Err(Error::Skeleton(format!(
                "expected {NUM_JOINTS} joints with names, parents and offsets; got {}/{}/{}",
                self.names.len(),
                n,
                self.offsets.len()
            )));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parents[0].is_some() {
            return Err(Error::Skeleton(format!(
                "joint 0 must be the single root, found {roots} parentless joints"
            )));
        }
        for (i, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                Some(p) => {
                    return Err(Error::Skeleton(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )))
                }
                None => unreachable!("root count checked"),
            }
        }
        if let Some(o) = self.offsets.iter().find(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::Skeleton(format!("non-finite rest offset {o:?}")));
        }
        if self.feet.is_empty() {
            return Err(Error::Skeleton("foot joint set is empty".into()));
        }
        let in_range = |set: &[usize]| set.iter().all(|&j| (1..n).contains(&j));
        if !in_range(&self.knee_feet) {
            return Err(Error::Skeleton("knee/foot joints must lie in 1..22".into()));
        }
        if !self.feet.iter().all(|j| self.knee_feet.contains(j)) {
            return Err(Error::Skeleton(
                "foot joints must be a subset of the knee/foot joints".into(),
            ));
        }
        if !self.toes.iter().all(|j| self.feet.contains(j)) {
            return Err(Error::Skeleton("toe joints must be foot joints".into()));
        }
        let mut sorted = self.knee_feet.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.knee_feet.len() {
            return Err(Error::Skeleton("duplicate knee/foot joints".into()));
        }
        Ok(())
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn is_toe(&self, joint: usize) -> bool {
        self.toes.contains(&joint)
    }

    /// Height threshold for a foot joint.
    pub fn height_threshold(&self, joint: usize, toe: f64, ankle: f64) -> f64 {
        if self.is_toe(joint) {
            toe
        } else {
            ankle
        }
    }

    /// Rest-pose positions, root at the origin.
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.parents.len()];
        for j in 1..out.len() {
            let p = self.parents[j].expect("non-root");
            out[j] = out[p] + self.offsets[j];
        }
        out
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        self.offsets[joint].norm()
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Skeleton::smpl()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smpl_default_is_valid() {
        let s = Skeleton::smpl();
        assert_eq!(s.knee_feet, vec![4, 5, 7, 8, 10, 11]);
        assert_eq!(s.feet, vec![7, 8, 10, 11]);
        assert_eq!(s.height_threshold(10, 0.05, 0.08), 0.05);
        assert_eq!(s.height_threshold(7, 0.05, 0.08), 0.08);
    }

    #[test]
    fn rejects_out_of_order_parents() {
        let mut s = Skeleton::smpl();
        s.parents[4] = Some(7);
        assert!(matches!(s.validate(), Err(Error::Skeleton(_))));
    }

    #[test]
    fn rejects_second_root() {
        let mut s = Skeleton::smpl();
        s.parents[3] = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_bad_sets() {
        let mut s = Skeleton::smpl();
        s.feet.clear();
        assert!(s.validate().is_err());
        let mut s = Skeleton::smpl();
        s.knee_feet = vec![4, 5, 7, 8, 10];
        assert!(s.validate().is_err());
        let mut s = Skeleton::smpl();
        s.knee_feet.push(0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn stance_heights_sit_under_thresholds() {
        let s = Skeleton::smpl();
        let rest = s.rest_positions();
        // ankle sits 0.05 above the toe joint
        assert!((rest[smpl::LEFT_ANKLE].y - rest[smpl::LEFT_FOOT].y - 0.05).abs() < 1e-12);
    }
}
