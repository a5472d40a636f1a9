//! Motion representation and kinematics.

pub mod features;
pub mod kinematics;
pub mod rotation;
pub mod skeleton;

use ndarray::{Array2, Array3};

pub use features::{
    join_features, split_features, FeatureBlocks, MotionSequence, RootState, FEATURE_DIM,
    NUM_JOINTS, NUM_LOCAL_JOINTS,
};
pub use kinematics::{
    cumsum_velocity, finite_difference, forward_kinematics, integrate_root, recover_global,
    GlobalPositions, RootTrajectory,
};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix};
pub use skeleton::Skeleton;

use crate::error::Result;

/// Builds a feature sequence from root rates, world joint positions and local
/// rotations. Positions and velocities are re-derived from `global`.
pub fn encode_motion(
    root: Array2<f64>,
    global: &GlobalPositions,
    rot: Array3<f64>,
    fps: f64,
) -> Result<MotionSequence> {
    let traj = integrate_root(root.view())?;
    let blocks = FeatureBlocks {
        pos: kinematics::to_local_positions(&traj, global),
        vel: kinematics::local_velocities(&traj, global),
        root,
        rot,
    };
    join_features(&blocks, fps)
}

impl MotionSequence {
    /// World joint positions of this sequence.
    pub fn global_positions(&self) -> GlobalPositions {
        let b = self.split();
        recover_global(b.root.view(), b.pos.view()).expect("validated layout")
    }
}
