//! Forward kinematics, root integration and global position recovery.
//!
//! Conventions: Y up, right-handed, ground plane `y = 0`. Root rates are
//! per-frame increments from frame `t-1` to `t` with a zero initial state, so
//! frame 0's rates carry no motion: `yaw[t] = sum(rate[1..=t])`, and planar
//! translation accumulates `R_y(yaw[t]) * (vx[t], 0, vz[t])`.
//! Joint velocities are world displacements from frame `t-1` to `t`
//! expressed in the heading frame of frame `t`; frame 0 has zero velocity.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::motion::features::{NUM_JOINTS, NUM_LOCAL_JOINTS};
use crate::motion::rotation::{rot6d_backward, rot6d_to_matrix, yaw_matrix, yaw_matrix_derivative};
use crate::motion::skeleton::Skeleton;

#[inline]
pub(crate) fn vec3(a: &Array3<f64>, t: usize, j: usize) -> Vector3<f64> {
    Vector3::new(a[[t, j, 0]], a[[t, j, 1]], a[[t, j, 2]])
}

#[inline]
pub(crate) fn vec3_view(a: &ArrayView3<f64>, t: usize, j: usize) -> Vector3<f64> {
    Vector3::new(a[[t, j, 0]], a[[t, j, 1]], a[[t, j, 2]])
}

#[inline]
pub(crate) fn put3(a: &mut Array3<f64>, t: usize, j: usize, v: &Vector3<f64>) {
    a[[t, j, 0]] = v.x;
    a[[t, j, 1]] = v.y;
    a[[t, j, 2]] = v.z;
}

/// World-frame joint positions, `L x 22 x 3` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPositions(Array3<f64>);

impl GlobalPositions {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (_, joints, comps) = data.dim();
        if comps != 3 || joints == 0 {
            return Err(Error::Shape(format!(
                "global positions must be L x J x 3, got {:?}",
                data.dim()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("global positions contain non-finite values".into()));
        }
        Ok(GlobalPositions(data))
    }

    pub fn len(&self) -> usize {
        self.0.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_joints(&self) -> usize {
        self.0.dim().1
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }

    pub fn joint(&self, t: usize, j: usize) -> Vector3<f64> {
        vec3(&self.0, t, j)
    }

    pub fn height(&self, t: usize, j: usize) -> f64 {
        self.0[[t, j, 1]]
    }
}

/// Integrated root motion.
#[derive(Debug, Clone, PartialEq)]
pub struct RootTrajectory {
    pub yaw: Array1<f64>,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub height: Array1<f64>,
}

impl RootTrajectory {
    pub fn len(&self) -> usize {
        self.yaw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yaw.is_empty()
    }

    pub fn position(&self, t: usize) -> Vector3<f64> {
        Vector3::new(self.x[t], self.height[t], self.z[t])
    }

    pub fn heading(&self, t: usize) -> Matrix3<f64> {
        yaw_matrix(self.yaw[t])
    }
}

/// Gradient of a scalar with respect to a [`RootTrajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrad {
    pub yaw: Array1<f64>,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub height: Array1<f64>,
}

impl TrajectoryGrad {
    pub fn zeros(len: usize) -> Self {
        TrajectoryGrad {
            yaw: Array1::zeros(len),
            x: Array1::zeros(len),
            z: Array1::zeros(len),
            height: Array1::zeros(len),
        }
    }

    pub fn accumulate(&mut self, other: &TrajectoryGrad) {
        self.yaw += &other.yaw;
        self.x += &other.x;
        self.z += &other.z;
        self.height += &other.height;
    }
}

fn check_root(root: &ArrayView2<f64>) -> Result<()> {
    if root.ncols() != 4 {
        return Err(Error::Shape(format!(
            "root block must have 4 columns, got {}",
            root.ncols()
        )));
    }
    if root.nrows() == 0 {
        return Err(Error::EmptyInput("root sequence has no frames".into()));
    }
    Ok(())
}

/// Accumulates per-frame root rates into a heading angle and planar track.
pub fn integrate_root(root: ArrayView2<f64>) -> Result<RootTrajectory> {
    check_root(&root)?;
    let len = root.nrows();
    let mut traj = RootTrajectory {
        yaw: Array1::zeros(len),
        x: Array1::zeros(len),
        z: Array1::zeros(len),
        height: root.column(3).to_owned(),
    };
    let (mut yaw, mut x, mut z) = (0.0, 0.0, 0.0);
    for t in 1..len {
        yaw += root[[t, 0]];
        let step = yaw_matrix(yaw) * Vector3::new(root[[t, 1]], 0.0, root[[t, 2]]);
        x += step.x;
        z += step.z;
        traj.yaw[t] = yaw;
        traj.x[t] = x;
        traj.z[t] = z;
    }
    Ok(traj)
}

/// Vector-Jacobian product of [`integrate_root`].
pub fn integrate_root_backward(
    root: ArrayView2<f64>,
    traj: &RootTrajectory,
    grad: &TrajectoryGrad,
) -> Array2<f64> {
    let len = root.nrows();
    let mut d_root = Array2::zeros((len, 4));
    let mut d_yaw = grad.yaw.clone();
    // reverse accumulation of the planar sums
    let (mut gx, mut gz) = (0.0, 0.0);
    d_root[[0, 3]] = grad.height[0];
    for s in (1..len).rev() {
        gx += grad.x[s];
        gz += grad.z[s];
        let g = Vector3::new(gx, 0.0, gz);
        let local = yaw_matrix(traj.yaw[s]).transpose() * g;
        d_root[[s, 1]] = local.x;
        d_root[[s, 2]] = local.z;
        let v = Vector3::new(root[[s, 1]], 0.0, root[[s, 2]]);
        d_yaw[s] += g.dot(&(yaw_matrix_derivative(traj.yaw[s]) * v));
        d_root[[s, 3]] = grad.height[s];
    }
    let mut acc = 0.0;
    for s in (1..len).rev() {
        acc += d_yaw[s];
        d_root[[s, 0]] = acc;
    }
    d_root
}

/// One frame of forward kinematics.
#[derive(Debug, Clone)]
pub struct FkFrame {
    pub local: Vec<Matrix3<f64>>,
    pub global: Vec<Matrix3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

/// Forward kinematics for one frame; `rot6d` is `21 x 6` (joints 1..22).
/// The root is pinned at the origin with identity orientation.
pub fn fk_frame(rot6d: ArrayView2<f64>, skeleton: &Skeleton) -> Result<FkFrame> {
    if rot6d.dim() != (NUM_LOCAL_JOINTS, 6) {
        return Err(Error::Shape(format!(
            "expected {NUM_LOCAL_JOINTS} x 6 rotations, got {:?}",
            rot6d.dim()
        )));
    }
    let mut local = vec![Matrix3::identity(); NUM_JOINTS];
    let mut global = vec![Matrix3::identity(); NUM_JOINTS];
    let mut positions = vec![Vector3::zeros(); NUM_JOINTS];
    for j in 1..NUM_JOINTS {
        let r = rot6d.row(j - 1);
        let r6 = [r[0], r[1], r[2], r[3], r[4], r[5]];
        local[j] = rot6d_to_matrix(&r6)?;
        let p = skeleton.parents[j].expect("non-root joint has a parent");
        global[j] = global[p] * local[j];
        positions[j] = positions[p] + global[p] * skeleton.offsets[j];
    }
    Ok(FkFrame {
        local,
        global,
        positions,
    })
}

/// Vector-Jacobian product of [`fk_frame`]: `d_pos` holds `dL/dp_j` for all
/// 22 joints (the root entry is ignored). Returns `dL/drot6d`, `21 x 6`.
pub fn fk_frame_backward(
    frame: &FkFrame,
    rot6d: ArrayView2<f64>,
    skeleton: &Skeleton,
    d_pos: &[Vector3<f64>],
) -> Array2<f64> {
    let mut dp = d_pos.to_vec();
    let mut dg = vec![Matrix3::zeros(); NUM_JOINTS];
    let mut out = Array2::zeros((NUM_LOCAL_JOINTS, 6));
    for j in (1..NUM_JOINTS).rev() {
        let p = skeleton.parents[j].expect("non-root joint has a parent");
        // p_j = p_p + G_p o_j
        let dpj = dp[j];
        dp[p] += dpj;
        dg[p] += dpj * skeleton.offsets[j].transpose();
        // G_j = G_p R_j
        let dgj = dg[j];
        dg[p] += dgj * frame.local[j].transpose();
        let d_local = frame.global[p].transpose() * dgj;
        let r = rot6d.row(j - 1);
        let r6 = [r[0], r[1], r[2], r[3], r[4], r[5]];
        let g = rot6d_backward(&r6, &d_local);
        for (k, v) in g.iter().enumerate() {
            out[[j - 1, k]] = *v;
        }
    }
    out
}

/// Root-relative joint positions (`L x 21 x 3`) from per-joint 6D rotations
/// (`L x 21 x 6`).
pub fn forward_kinematics(rot6d: ArrayView3<f64>, skeleton: &Skeleton) -> Result<Array3<f64>> {
    let len = rot6d.dim().0;
    if rot6d.dim() != (len, NUM_LOCAL_JOINTS, 6) {
        return Err(Error::Shape(format!(
            "expected L x {NUM_LOCAL_JOINTS} x 6 rotations, got {:?}",
            rot6d.dim()
        )));
    }
    let mut out = Array3::zeros((len, NUM_LOCAL_JOINTS, 3));
    for t in 0..len {
        let frame = fk_frame(rot6d.index_axis(ndarray::Axis(0), t), skeleton)?;
        for j in 1..NUM_JOINTS {
            put3(&mut out, t, j - 1, &frame.positions[j]);
        }
    }
    Ok(out)
}

/// Global joint positions from root rates and root-relative positions.
pub fn recover_global(root: ArrayView2<f64>, local_pos: ArrayView3<f64>) -> Result<GlobalPositions> {
    check_root(&root)?;
    let traj = integrate_root(root)?;
    recover_global_with(&traj, local_pos)
}

/// [`recover_global`] for an already integrated trajectory.
pub fn recover_global_with(traj: &RootTrajectory, local_pos: ArrayView3<f64>) -> Result<GlobalPositions> {
    let len = traj.len();
    if local_pos.dim() != (len, NUM_LOCAL_JOINTS, 3) {
        return Err(Error::Shape(format!(
            "local positions {:?} do not match {len} root frames",
            local_pos.dim()
        )));
    }
    let mut out = Array3::zeros((len, NUM_JOINTS, 3));
    for t in 0..len {
        let heading = traj.heading(t);
        let origin = traj.position(t);
        put3(&mut out, t, 0, &origin);
        for j in 1..NUM_JOINTS {
            let p = heading * vec3_view(&local_pos, t, j - 1) + origin;
            put3(&mut out, t, j, &p);
        }
    }
    GlobalPositions::new(out)
}

/// Vector-Jacobian product of [`recover_global_with`]. Returns the trajectory
/// gradient and `dL/dlocal_pos`.
pub fn recover_global_backward(
    traj: &RootTrajectory,
    local_pos: ArrayView3<f64>,
    d_global: ArrayView3<f64>,
) -> (TrajectoryGrad, Array3<f64>) {
    let len = traj.len();
    let mut grad = TrajectoryGrad::zeros(len);
    let mut d_local = Array3::zeros((len, NUM_LOCAL_JOINTS, 3));
    for t in 0..len {
        let heading_t = traj.heading(t).transpose();
        let deriv = yaw_matrix_derivative(traj.yaw[t]);
        let mut sum = vec3_view(&d_global, t, 0);
        let mut d_yaw = 0.0;
        for j in 1..NUM_JOINTS {
            let g = vec3_view(&d_global, t, j);
            sum += g;
            put3(&mut d_local, t, j - 1, &(heading_t * g));
            d_yaw += g.dot(&(deriv * vec3_view(&local_pos, t, j - 1)));
        }
        grad.x[t] = sum.x;
        grad.height[t] = sum.y;
        grad.z[t] = sum.z;
        grad.yaw[t] = d_yaw;
    }
    (grad, d_local)
}

/// Heading-frame root-relative positions of joints 1..22 from world positions.
pub fn to_local_positions(traj: &RootTrajectory, global: &GlobalPositions) -> Array3<f64> {
    let len = global.len();
    let mut out = Array3::zeros((len, NUM_LOCAL_JOINTS, 3));
    for t in 0..len {
        let inv = traj.heading(t).transpose();
        let origin = traj.position(t);
        for j in 1..NUM_JOINTS {
            put3(&mut out, t, j - 1, &(inv * (global.joint(t, j) - origin)));
        }
    }
    out
}

/// Per-joint velocities in the heading frame: `R(yaw[t])^T (P[t] - P[t-1])`.
pub fn local_velocities(traj: &RootTrajectory, global: &GlobalPositions) -> Array3<f64> {
    let (len, joints) = (global.len(), global.num_joints());
    let mut out = Array3::zeros((len, joints, 3));
    for t in 1..len {
        let inv = traj.heading(t).transpose();
        for j in 0..joints {
            put3(&mut out, t, j, &(inv * (global.joint(t, j) - global.joint(t - 1, j))));
        }
    }
    out
}

/// Integrates heading-frame velocities (`L x J x 3`) into world positions
/// starting from `anchor` (`J x 3`): `W[t] = anchor + sum_{s<=t} R(yaw[s]) v[s]`.
pub fn integrate_local_velocities(
    traj: &RootTrajectory,
    vel: ArrayView3<f64>,
    anchor: ArrayView2<f64>,
) -> Result<Array3<f64>> {
    let (len, joints, comps) = vel.dim();
    if len != traj.len() || comps != 3 || anchor.dim() != (joints, 3) {
        return Err(Error::Shape(format!(
            "velocities {:?} / anchor {:?} do not match {} root frames",
            vel.dim(),
            anchor.dim(),
            traj.len()
        )));
    }
    let mut out = Array3::zeros((len, joints, 3));
    let mut acc: Vec<Vector3<f64>> = (0..joints)
        .map(|j| Vector3::new(anchor[[j, 0]], anchor[[j, 1]], anchor[[j, 2]]))
        .collect();
    for t in 0..len {
        let heading = traj.heading(t);
        for (j, a) in acc.iter_mut().enumerate() {
            *a += heading * vec3_view(&vel, t, j);
            put3(&mut out, t, j, a);
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`integrate_local_velocities`] with respect to
/// the velocities and the heading angles.
pub fn integrate_local_velocities_backward(
    traj: &RootTrajectory,
    vel: ArrayView3<f64>,
    d_world: ArrayView3<f64>,
) -> (Array3<f64>, Array1<f64>) {
    let (len, joints, _) = vel.dim();
    let mut d_vel = Array3::zeros((len, joints, 3));
    let mut d_yaw = Array1::zeros(len);
    let mut acc = vec![Vector3::zeros(); joints];
    for t in (0..len).rev() {
        let inv = traj.heading(t).transpose();
        let deriv = yaw_matrix_derivative(traj.yaw[t]);
        let mut dy = 0.0;
        for (j, g) in acc.iter_mut().enumerate() {
            *g += vec3_view(&d_world, t, j);
            put3(&mut d_vel, t, j, &(inv * *g));
            dy += g.dot(&(deriv * vec3_view(&vel, t, j)));
        }
        d_yaw[t] = dy;
    }
    (d_vel, d_yaw)
}

/// `positions[t] = initial + sum_{s<=t} vel[s]`, column-wise.
pub fn cumsum_velocity(vel: ArrayView2<f64>, initial: ArrayView1<f64>) -> Result<Array2<f64>> {
    if vel.ncols() != initial.len() {
        return Err(Error::Shape(format!(
            "velocity width {} does not match initial position width {}",
            vel.ncols(),
            initial.len()
        )));
    }
    let mut out = Array2::zeros(vel.raw_dim());
    let mut acc = initial.to_owned();
    for (t, row) in vel.outer_iter().enumerate() {
        acc += &row;
        out.row_mut(t).assign(&acc);
    }
    Ok(out)
}

/// Backward differences with a zero first row; inverse of [`cumsum_velocity`]
/// with `initial = positions[0]`.
pub fn finite_difference(pos: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(pos.raw_dim());
    for t in 1..pos.nrows() {
        let d = &pos.row(t) - &pos.row(t - 1);
        out.row_mut(t).assign(&d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::{axis_angle, matrix_to_rot6d, IDENTITY_6D};
    use approx::assert_relative_eq;
    use ndarray::{arr1, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_rotations(len: usize) -> Array3<f64> {
        let mut r = Array3::zeros((len, NUM_LOCAL_JOINTS, 6));
        for t in 0..len {
            for j in 0..NUM_LOCAL_JOINTS {
                for k in 0..6 {
                    r[[t, j, k]] = IDENTITY_6D[k];
                }
            }
        }
        r
    }

    #[test]
    fn identity_fk_is_cumulative_offsets() {
        let skel = Skeleton::smpl();
        let pos = forward_kinematics(identity_rotations(2).view(), &skel).unwrap();
        let rest = skel.rest_positions();
        for t in 0..2 {
            for j in 1..NUM_JOINTS {
                assert_eq!(vec3(&pos, t, j - 1), rest[j]);
            }
        }
    }

    #[test]
    fn one_link_rotation() {
        // joint 3 (spine1) rotated +90 deg about Z; its child 6 sits at (0, 0.13, 0)
        let skel = Skeleton::smpl();
        let mut rot = identity_rotations(1);
        let r = matrix_to_rot6d(&axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2));
        for k in 0..6 {
            rot[[0, 2, k]] = r[k];
        }
        let pos = forward_kinematics(rot.view(), &skel).unwrap();
        let rel = vec3(&pos, 0, 5) - vec3(&pos, 0, 2);
        assert_relative_eq!(rel, Vector3::new(-0.13, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn fk_backward_matches_finite_differences() {
        let skel = Skeleton::smpl();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rot = Array2::from_shape_fn((NUM_LOCAL_JOINTS, 6), |_| rng.random_range(-1.0..1.0));
        let weights: Vec<Vector3<f64>> = (0..NUM_JOINTS)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let loss = |r: &Array2<f64>| -> f64 {
            let f = fk_frame(r.view(), &skel).unwrap();
            (1..NUM_JOINTS).map(|j| f.positions[j].dot(&weights[j])).sum()
        };
        let frame = fk_frame(rot.view(), &skel).unwrap();
        let analytic = fk_frame_backward(&frame, rot.view(), &skel, &weights);
        let h = 1e-6;
        for j in 0..NUM_LOCAL_JOINTS {
            for k in 0..6 {
                let mut p = rot.clone();
                let mut m = rot.clone();
                p[[j, k]] += h;
                m[[j, k]] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert_relative_eq!(analytic[[j, k]], fd, epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn zero_rates_zero_trajectory() {
        let traj = integrate_root(Array2::zeros((5, 4)).view()).unwrap();
        assert!(traj.yaw.iter().chain(traj.x.iter()).chain(traj.z.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_planar_velocity_series() {
        let mut root = Array2::zeros((10, 4));
        root.column_mut(1).fill(0.02);
        let traj = integrate_root(root.view()).unwrap();
        assert_eq!(traj.x[0], 0.0);
        assert_relative_eq!(traj.x[9], 0.18, epsilon = 1e-12);
    }

    #[test]
    fn no_motion_recovery() {
        let mut root = Array2::zeros((3, 4));
        root.column_mut(3).fill(0.9);
        let mut local = Array3::zeros((3, NUM_LOCAL_JOINTS, 3));
        local[[1, 4, 0]] = 0.3;
        let g = recover_global(root.view(), local.view()).unwrap();
        for t in 0..3 {
            assert_eq!(g.joint(t, 0), Vector3::new(0.0, 0.9, 0.0));
            for j in 1..NUM_JOINTS {
                assert_relative_eq!(g.joint(t, j), vec3(&local, t, j - 1) + Vector3::new(0.0, 0.9, 0.0));
            }
        }
    }

    #[test]
    fn quarter_turn_recovery() {
        let mut root = Array2::zeros((2, 4));
        root[[1, 0]] = std::f64::consts::FRAC_PI_2;
        let mut local = Array3::zeros((2, NUM_LOCAL_JOINTS, 3));
        local[[1, 0, 0]] = 1.0;
        let g = recover_global(root.view(), local.view()).unwrap();
        assert_relative_eq!(g.joint(1, 1), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn recover_rejects_length_mismatch() {
        let root = Array2::zeros((3, 4));
        let local = Array3::zeros((2, NUM_LOCAL_JOINTS, 3));
        assert!(matches!(recover_global(root.view(), local.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn cumsum_examples() {
        let v = Array2::zeros((4, 3));
        let p = cumsum_velocity(v.view(), arr1(&[1.0, 2.0, 3.0]).view()).unwrap();
        assert!(p.outer_iter().all(|r| r == arr1(&[1.0, 2.0, 3.0])));
        let v = Array2::ones((5, 3));
        let p = cumsum_velocity(v.view(), arr1(&[0.0, 0.0, 0.0]).view()).unwrap();
        assert_eq!(p.row(4), arr1(&[5.0, 5.0, 5.0]));
    }

    #[test]
    fn cumsum_inverts_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Array2::from_shape_fn((40, 5), |_| rng.random_range(-2.0..2.0));
        let back = cumsum_velocity(finite_difference(p.view()).view(), p.row(0)).unwrap();
        for (a, b) in back.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    fn random_root(rng: &mut ChaCha8Rng, len: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, 4), |(_, c)| match c {
            0 => rng.random_range(-0.2..0.2),
            3 => rng.random_range(0.5..1.0),
            _ => rng.random_range(-0.05..0.05),
        })
    }

    #[test]
    fn root_and_recovery_backward_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let len = 6;
        let root = random_root(&mut rng, len);
        let local = Array3::from_shape_fn((len, NUM_LOCAL_JOINTS, 3), |_| rng.random_range(-1.0..1.0));
        let w = Array3::from_shape_fn((len, NUM_JOINTS, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |r: &Array2<f64>, l: &Array3<f64>| -> f64 {
            let g = recover_global(r.view(), l.view()).unwrap();
            (g.data() * &w).sum()
        };
        let traj = integrate_root(root.view()).unwrap();
        let (tg, d_local) = recover_global_backward(&traj, local.view(), w.view());
        let d_root = integrate_root_backward(root.view(), &traj, &tg);
        let h = 1e-6;
        for idx in ndarray::indices(root.dim()) {
            let (mut p, mut m) = (root.clone(), root.clone());
            p[idx] += h;
            m[idx] -= h;
            let fd = (loss(&p, &local) - loss(&m, &local)) / (2.0 * h);
            assert_relative_eq!(d_root[idx], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
        for idx in ndarray::indices(local.dim()) {
            let (mut p, mut m) = (local.clone(), local.clone());
            p[idx] += h;
            m[idx] -= h;
            let fd = (loss(&root, &p) - loss(&root, &m)) / (2.0 * h);
            assert_relative_eq!(d_local[idx], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn velocity_integration_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let len = 5;
        let root = random_root(&mut rng, len);
        let vel = Array3::from_shape_fn((len, 3, 3), |_| rng.random_range(-0.1..0.1));
        let anchor = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let w = Array3::from_shape_fn((len, 3, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |r: &Array2<f64>, v: &Array3<f64>| -> f64 {
            let traj = integrate_root(r.view()).unwrap();
            (integrate_local_velocities(&traj, v.view(), anchor.view()).unwrap() * &w).sum()
        };
        let traj = integrate_root(root.view()).unwrap();
        let (d_vel, d_yaw) = integrate_local_velocities_backward(&traj, vel.view(), w.view());
        let mut tg = TrajectoryGrad::zeros(len);
        tg.yaw = d_yaw;
        let d_root = integrate_root_backward(root.view(), &traj, &tg);
        let h = 1e-6;
        for idx in ndarray::indices(vel.dim()) {
            let (mut p, mut m) = (vel.clone(), vel.clone());
            p[idx] += h;
            m[idx] -= h;
            let fd = (loss(&root, &p) - loss(&root, &m)) / (2.0 * h);
            assert_relative_eq!(d_vel[idx], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
        for t in 0..len {
            let (mut p, mut m) = (root.clone(), root.clone());
            p[[t, 0]] += h;
            m[[t, 0]] -= h;
            let fd = (loss(&p, &vel) - loss(&m, &vel)) / (2.0 * h);
            assert_relative_eq!(d_root[[t, 0]], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn local_velocity_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let len = 12;
        let root = random_root(&mut rng, len);
        let local = Array3::from_shape_fn((len, NUM_LOCAL_JOINTS, 3), |_| rng.random_range(-1.0..1.0));
        let traj = integrate_root(root.view()).unwrap();
        let g = recover_global_with(&traj, local.view()).unwrap();
        let vel = local_velocities(&traj, &g);
        let anchor = g.data().index_axis(Axis(0), 0).to_owned();
        let world = integrate_local_velocities(&traj, vel.view(), anchor.view()).unwrap();
        for (a, b) in world.iter().zip(g.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = to_local_positions(&traj, &GlobalPositions::new(world).unwrap());
        for (a, b) in back.iter().zip(local.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
