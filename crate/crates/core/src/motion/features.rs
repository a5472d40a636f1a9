//! Per-frame feature layout `[root | joint velocities | joint positions | joint rotations]`.

use ndarray::{s, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Joints in the body skeleton, root included.
pub const NUM_JOINTS: usize = 22;
/// Non-root joints carried by the position and rotation blocks.
pub const NUM_LOCAL_JOINTS: usize = NUM_JOINTS - 1;

pub const ROOT_DIM: usize = 4;
pub const VEL_DIM: usize = 3 * NUM_JOINTS;
pub const POS_DIM: usize = 3 * NUM_LOCAL_JOINTS;
pub const ROT_DIM: usize = 6 * NUM_LOCAL_JOINTS;
pub const FEATURE_DIM: usize = ROOT_DIM + VEL_DIM + POS_DIM + ROT_DIM;

pub const ROOT_OFFSET: usize = 0;
pub const VEL_OFFSET: usize = ROOT_OFFSET + ROOT_DIM;
pub const POS_OFFSET: usize = VEL_OFFSET + VEL_DIM;
pub const ROT_OFFSET: usize = POS_OFFSET + POS_DIM;

/// Column range of joint `j`'s velocity (`j` in `0..22`).
pub fn vel_cols(j: usize) -> std::ops::Range<usize> {
    let start = VEL_OFFSET + 3 * j;
    start..start + 3
}

/// Column range of joint `j`'s local position (`j` in `1..22`).
pub fn pos_cols(j: usize) -> std::ops::Range<usize> {
    debug_assert!(j >= 1);
    let start = POS_OFFSET + 3 * (j - 1);
    start..start + 3
}

/// Column range of joint `j`'s 6D rotation (`j` in `1..22`).
pub fn rot_cols(j: usize) -> std::ops::Range<usize> {
    debug_assert!(j >= 1);
    let start = ROT_OFFSET + 6 * (j - 1);
    start..start + 6
}

/// Root channels of one frame.
///
/// Rates are per-frame increments: radians/frame for yaw, meters/frame for the
/// planar velocities, both expressed in the root's heading frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootState {
    pub yaw_rate: f64,
    pub vel_x: f64,
    pub vel_z: f64,
    pub height: f64,
}

impl RootState {
    pub fn to_array(self) -> [f64; 4] {
        [self.yaw_rate, self.vel_x, self.vel_z, self.height]
    }

    pub fn from_slice(row: &[f64]) -> Self {
        RootState {
            yaw_rate: row[0],
            vel_x: row[1],
            vel_z: row[2],
            height: row[3],
        }
    }
}

/// A motion clip as an `L x 259` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Array2<f64>,
    fps: f64,
}

impl MotionSequence {
    pub fn new(frames: Array2<f64>, fps: f64) -> Result<Self> {
        let (len, dim) = frames.dim();
        if dim != FEATURE_DIM {
            return Err(Error::Layout(format!(
                "expected {FEATURE_DIM} features per frame, got {dim}"
            )));
        }
        if len < 2 {
            return Err(Error::Layout(format!("need at least 2 frames, got {len}")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::config("fps", format!("must be positive, got {fps}")));
        }
        if let Some(idx) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::Layout(format!(
                "non-finite value at frame {}, feature {}",
                idx / dim,
                idx % dim
            )));
        }
        Ok(MotionSequence { frames, fps })
    }

    pub fn zeros(len: usize, fps: f64) -> Result<Self> {
        Self::new(Array2::zeros((len, FEATURE_DIM)), fps)
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn root_state(&self, frame: usize) -> RootState {
        RootState::from_slice(
            self.frames
                .slice(s![frame, ROOT_OFFSET..ROOT_OFFSET + ROOT_DIM])
                .as_slice()
                .expect("standard layout"),
        )
    }

    /// Splits into the four feature blocks.
    pub fn split(&self) -> FeatureBlocks {
        split_features(self.frames.view()).expect("validated layout")
    }
}

/// The four blocks of a motion sequence, reshaped per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlocks {
    /// `L x 4`: yaw rate, planar velocities, height.
    pub root: Array2<f64>,
    /// `L x 22 x 3`: per-joint velocities (root included).
    pub vel: Array3<f64>,
    /// `L x 21 x 3`: root-relative positions in the heading frame.
    pub pos: Array3<f64>,
    /// `L x 21 x 6`: local joint rotations, 6D encoded.
    pub rot: Array3<f64>,
}

impl FeatureBlocks {
    pub fn len(&self) -> usize {
        self.root.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.root.nrows() == 0
    }

    pub fn root_states(&self) -> Vec<RootState> {
        self.root
            .outer_iter()
            .map(|row| RootState::from_slice(row.as_slice().expect("standard layout")))
            .collect()
    }
}

/// Splits a raw `L x 259` matrix into its blocks.
pub fn split_features(frames: ArrayView2<f64>) -> Result<FeatureBlocks> {
    let (len, dim) = frames.dim();
    if dim != FEATURE_DIM {
        return Err(Error::Layout(format!(
            "expected {FEATURE_DIM} features per frame, got {dim}"
        )));
    }
    let block = |start: usize, width: usize| frames.slice(s![.., start..start + width]).to_owned();
    let reshape = |a: Array2<f64>, joints: usize, comps: usize| {
        a.into_shape_with_order((len, joints, comps))
            .expect("block width matches joint layout")
    };
    Ok(FeatureBlocks {
        root: block(ROOT_OFFSET, ROOT_DIM),
        vel: reshape(block(VEL_OFFSET, VEL_DIM), NUM_JOINTS, 3),
        pos: reshape(block(POS_OFFSET, POS_DIM), NUM_LOCAL_JOINTS, 3),
        rot: reshape(block(ROT_OFFSET, ROT_DIM), NUM_LOCAL_JOINTS, 6),
    })
}

/// Inverse of [`split_features`].
pub fn join_features(blocks: &FeatureBlocks, fps: f64) -> Result<MotionSequence> {
    MotionSequence::new(join_raw(blocks)?, fps)
}

/// Concatenates blocks without validating the result as a [`MotionSequence`].
pub fn join_raw(blocks: &FeatureBlocks) -> Result<Array2<f64>> {
    let len = blocks.root.nrows();
    let shapes = [
        ("root", blocks.root.shape().to_vec(), vec![len, ROOT_DIM]),
        ("velocity", blocks.vel.shape().to_vec(), vec![len, NUM_JOINTS, 3]),
        ("position", blocks.pos.shape().to_vec(), vec![len, NUM_LOCAL_JOINTS, 3]),
        ("rotation", blocks.rot.shape().to_vec(), vec![len, NUM_LOCAL_JOINTS, 6]),
    ];
    for (name, got, want) in shapes {
        if got != want {
            return Err(Error::Layout(format!(
                "{name} block has shape {got:?}, expected {want:?}"
            )));
        }
    }
    let mut out = Array2::zeros((len, FEATURE_DIM));
    out.slice_mut(s![.., ROOT_OFFSET..ROOT_OFFSET + ROOT_DIM])
        .assign(&blocks.root);
    let flat = |a: &Array3<f64>, width: usize| {
        a.as_standard_layout()
            .into_owned()
            .into_shape_with_order((len, width))
            .expect("contiguous block")
    };
    out.slice_mut(s![.., VEL_OFFSET..VEL_OFFSET + VEL_DIM])
        .assign(&flat(&blocks.vel, VEL_DIM));
    out.slice_mut(s![.., POS_OFFSET..POS_OFFSET + POS_DIM])
        .assign(&flat(&blocks.pos, POS_DIM));
    out.slice_mut(s![.., ROT_OFFSET..ROT_OFFSET + ROT_DIM])
        .assign(&flat(&blocks.rot, ROT_DIM));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_widths() {
        assert_eq!(FEATURE_DIM, 259);
        assert_eq!((ROOT_DIM, VEL_DIM, POS_DIM, ROT_DIM), (4, 66, 63, 126));
        assert_eq!(ROT_OFFSET + ROT_DIM, FEATURE_DIM);
        assert_eq!(pos_cols(1).start, 70);
        assert_eq!(rot_cols(21).end, 259);
    }

    #[test]
    fn zero_split_has_expected_widths() {
        let m = MotionSequence::zeros(2, 30.0).unwrap();
        let b = m.split();
        assert_eq!(b.root.dim(), (2, 4));
        assert_eq!(b.vel.dim(), (2, 22, 3));
        assert_eq!(b.pos.dim(), (2, 21, 3));
        assert_eq!(b.rot.dim(), (2, 21, 6));
        assert!(b.root.iter().chain(b.vel.iter()).chain(b.pos.iter()).chain(b.rot.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn root_read_off() {
        let mut frames = Array2::zeros((2, FEATURE_DIM));
        frames.row_mut(0).slice_mut(s![0..4]).assign(&ndarray::arr1(&[0.1, 0.2, 0.3, 0.9]));
        let m = MotionSequence::new(frames, 30.0).unwrap();
        let r = m.split().root_states()[0];
        assert_eq!(
            r,
            RootState { yaw_rate: 0.1, vel_x: 0.2, vel_z: 0.3, height: 0.9 }
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            MotionSequence::new(Array2::zeros((4, 258)), 30.0),
            Err(Error::Layout(_))
        ));
        assert!(MotionSequence::new(Array2::zeros((1, FEATURE_DIM)), 30.0).is_err());
        assert!(MotionSequence::new(Array2::zeros((3, FEATURE_DIM)), 0.0).is_err());
        let mut f = Array2::zeros((3, FEATURE_DIM));
        f[[1, 7]] = f64::NAN;
        assert!(MotionSequence::new(f, 30.0).is_err());
        assert!(matches!(split_features(Array2::zeros((3, 10)).view()), Err(Error::Layout(_))));
    }

    proptest! {
        #[test]
        fn join_inverts_split(len in 2usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let frames = Array2::from_shape_fn((len, FEATURE_DIM), |_| rng.random_range(-5.0..5.0));
            let m = MotionSequence::new(frames, 30.0).unwrap();
            let back = join_features(&m.split(), m.fps()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
