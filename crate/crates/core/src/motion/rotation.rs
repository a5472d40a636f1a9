//! Continuous 6D rotation encoding and heading rotations.
//!
//! A 6D vector holds the first two columns of a rotation matrix. Decoding
//! orthonormalizes them with Gram–Schmidt and completes the frame with a cross
//! product, so any non-degenerate 6-vector maps to a proper rotation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const DEGENERATE_NORM: f64 = 1e-9;

/// Decodes a 6D rotation into an orthonormal matrix with determinant +1.
pub fn rot6d_to_matrix(r6: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    let n1 = a1.norm();
    if !(n1 > DEGENERATE_NORM) {
        return Err(Error::SingularRotation(format!(
            "first column has norm {n1:e}"
        )));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if !(n2 > DEGENERATE_NORM) {
        return Err(Error::SingularRotation(format!(
            "second column is parallel to the first (residual {n2:e})"
        )));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Encodes a rotation matrix by its first two columns.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Vector-Jacobian product of [`rot6d_to_matrix`]: maps `dL/dR` to `dL/dr6`.
pub fn rot6d_backward(r6: &[f64; 6], grad: &Matrix3<f64>) -> [f64; 6] {
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    let n1 = a1.norm();
    let b1 = a1 / n1;
    let proj = b1.dot(&a2);
    let u = a2 - b1 * proj;
    let n2 = u.norm();
    let b2 = u / n2;

    let g1: Vector3<f64> = grad.column(0).into();
    let g2: Vector3<f64> = grad.column(1).into();
    let g3: Vector3<f64> = grad.column(2).into();

    // b3 = b1 x b2
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);
    // b2 = u / |u|
    let gu = (gb2 - b2 * b2.dot(&gb2)) / n2;
    // u = a2 - (b1 . a2) b1
    let ga2 = gu - b1 * b1.dot(&gu);
    gb1 -= a2 * b1.dot(&gu) + gu * proj;
    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}

/// Rotation about +Y by `angle` radians (right-handed, Y up).
pub fn yaw_matrix(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Derivative of [`yaw_matrix`] with respect to the angle.
pub fn yaw_matrix_derivative(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Rotation about an arbitrary unit axis.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
        (r.transpose() * r - Matrix3::identity()).abs().max()
    }

    #[test]
    fn identity_columns() {
        let r = rot6d_to_matrix(&IDENTITY_6D).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn scaled_columns_normalize() {
        let r = rot6d_to_matrix(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            rot6d_to_matrix(&[0.0; 6]),
            Err(Error::SingularRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(Error::SingularRotation(_))
        ));
        assert!(rot6d_to_matrix(&[f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let m = axis_angle(Vector3::new(0.3, -1.0, 0.2), 1.1);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
        assert_relative_eq!(back, m, epsilon = 1e-12);
    }

    #[test]
    fn yaw_quarter_turn() {
        let p = yaw_matrix(std::f64::consts::FRAC_PI_2) * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let r6 = [0.7, -0.2, 0.4, 0.3, 0.9, -0.5];
        let weights = Matrix3::new(0.3, -1.2, 0.5, 2.0, 0.1, -0.7, 0.4, 0.8, -0.3);
        let loss = |v: &[f64; 6]| rot6d_to_matrix(v).unwrap().component_mul(&weights).sum();
        let analytic = rot6d_backward(&r6, &weights);
        for i in 0..6 {
            let h = 1e-6;
            let mut p = r6;
            let mut m = r6;
            p[i] += h;
            m[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert_relative_eq!(analytic[i], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn yaw_derivative_matches_finite_differences() {
        let h = 1e-6;
        let fd = (yaw_matrix(0.4 + h) - yaw_matrix(0.4 - h)) / (2.0 * h);
        assert_relative_eq!(fd, yaw_matrix_derivative(0.4), epsilon = 1e-8);
    }

    proptest! {
        #[test]
        fn decoded_rotations_are_proper(v in prop::array::uniform6(-3.0f64..3.0)) {
            let a1 = Vector3::new(v[0], v[1], v[2]);
            let a2 = Vector3::new(v[3], v[4], v[5]);
            prop_assume!(a1.norm() > 1e-3 && a1.normalize().cross(&a2).norm() > 1e-3);
            let r = rot6d_to_matrix(&v).unwrap();
            prop_assert!(orthonormality_error(&r) < 1e-6);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }
}
