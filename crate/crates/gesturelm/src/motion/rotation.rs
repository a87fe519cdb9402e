//! 6D <-> matrix <-> axis-angle conversions and the geodesic metric.

use super::Rotation6D;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};

const DEGENERACY_EPS: f64 = 1e-12;

/// Gram-Schmidt construction: normalize the first 3-vector, orthogonalize the
/// second against it, take their cross product as the third column.
pub fn sixd_to_rotmat(r: &Rotation6D) -> Result<Matrix3<f64>> {
    let v = &r.0;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidRotation("non-finite 6D rotation".into()));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 * n1 < DEGENERACY_EPS {
        return Err(Error::InvalidRotation("first 6D column is (near) zero".into()));
    }
    let b1 = a1 / n1;
    let b2 = a2 - b1 * b1.dot(&a2);
    let n2 = b2.norm();
    if n2 * n2 < DEGENERACY_EPS {
        return Err(Error::InvalidRotation(
            "6D columns are (near) parallel; rotation is degenerate".into(),
        ));
    }
    let b2 = b2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Inverse map: the first two matrix columns.
pub fn rotmat_to_sixd(m: &Matrix3<f64>) -> Result<Rotation6D> {
    check_orthonormal(m, 1e-4)?;
    Ok(Rotation6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]))
}

fn check_orthonormal(m: &Matrix3<f64>, tol: f64) -> Result<()> {
    let gram = m.transpose() * m;
    let err = (gram - Matrix3::identity()).abs().max();
    if err > tol {
        return Err(Error::InvalidRotation(format!(
            "matrix is not orthonormal (|R'R - I| = {err:.2e} > {tol:.0e})"
        )));
    }
    if (m.determinant() - 1.0).abs() > tol {
        return Err(Error::InvalidRotation("matrix determinant is not +1".into()));
    }
    Ok(())
}

/// Axis-angle decomposition with angle in `[0, pi]`.
///
/// Angle 0 returns the fixed axis `(1, 0, 0)` so callers get a deterministic
/// value.
pub fn rotmat_to_axis_angle(m: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle < 1e-9 {
        return (Vector3::x(), 0.0);
    }
    if (std::f64::consts::PI - angle) < 1e-6 {
        // Near pi the antisymmetric part vanishes; recover the axis from
        // R = 2*aa' - I instead.
        let d = (m + Matrix3::identity()) / 2.0;
        let mut axis = Vector3::new(d[(0, 0)].max(0.0).sqrt(), d[(1, 1)].max(0.0).sqrt(), d[(2, 2)].max(0.0).sqrt());
        // Fix signs from the off-diagonal products, anchored on the largest
        // component.
        let k = axis.imax();
        if axis[k] > 0.0 {
            for i in 0..3 {
                if i != k && d[(k, i)] < 0.0 {
                    axis[i] = -axis[i];
                }
            }
        }
        let n = axis.norm();
        if n > 0.0 {
            axis /= n;
        } else {
            axis = Vector3::x();
        }
        return (axis, angle);
    }
    let axis = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) / (2.0 * angle.sin());
    (axis.normalize(), angle)
}

/// Geodesic distance on SO(3): `arccos((trace(R1'R2) - 1) / 2)`, the arccos
/// argument clamped to `[-1, 1]`.
pub fn geodesic_distance(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let rel = r1.transpose() * r2;
    (((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Rebuild a rotation matrix from axis-angle (Rodrigues' formula).
pub fn axis_angle_to_rotmat(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let a = axis.normalize();
    let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn assert_mat_eq(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        assert!((a - b).abs().max() < tol, "matrices differ:\n{a}\n{b}");
    }

    #[test]
    fn identity_sixd_gives_identity_matrix() {
        let m = sixd_to_rotmat(&Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_mat_eq(&m, &Matrix3::identity(), 1e-12);
    }

    #[test]
    fn gram_schmidt_removes_scale() {
        let m = sixd_to_rotmat(&Rotation6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_mat_eq(&m, &Matrix3::identity(), 1e-12);
    }

    #[test]
    fn degenerate_sixd_is_an_error() {
        assert!(sixd_to_rotmat(&Rotation6D([0.0; 6])).is_err());
        assert!(sixd_to_rotmat(&Rotation6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
        assert!(sixd_to_rotmat(&Rotation6D([1.0, 0.0, 0.0, f64::NAN, 1.0, 0.0])).is_err());
    }

    #[test]
    fn sixd_of_identity_matrix() {
        let r = rotmat_to_sixd(&Matrix3::identity()).unwrap();
        assert_eq!(r.0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sixd_of_z_rotation_is_first_two_columns() {
        let m = axis_angle_to_rotmat(&Vector3::z(), PI / 2.0);
        let r = rotmat_to_sixd(&m).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(r.0[i], m[(i, 0)], epsilon = 1e-12);
            assert_abs_diff_eq!(r.0[3 + i], m[(i, 1)], epsilon = 1e-12);
        }
    }

    #[test]
    fn rotmat_to_sixd_rejects_non_orthonormal() {
        let m = Matrix3::identity() * 1.01;
        assert!(rotmat_to_sixd(&m).is_err());
    }

    #[test]
    fn axis_angle_identity() {
        let (_, angle) = rotmat_to_axis_angle(&Matrix3::identity());
        assert_eq!(angle, 0.0);
    }

    #[test]
    fn axis_angle_pi_about_x() {
        let m = axis_angle_to_rotmat(&Vector3::x(), PI);
        let (axis, angle) = rotmat_to_axis_angle(&m);
        assert_abs_diff_eq!(angle, PI, epsilon = 1e-9);
        assert_abs_diff_eq!(axis.x.abs(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn geodesic_zero_and_antipodal() {
        let m = axis_angle_to_rotmat(&Vector3::new(0.3, -0.5, 0.8), 1.1);
        assert_eq!(geodesic_distance(&m, &m), 0.0);
        let half_turn = axis_angle_to_rotmat(&Vector3::z(), PI);
        assert_abs_diff_eq!(geodesic_distance(&Matrix3::identity(), &half_turn), PI, epsilon = 1e-9);
    }

    prop_compose! {
        fn arb_sixd()(v in prop::array::uniform6(-2.0f64..2.0)) -> Rotation6D {
            Rotation6D(v)
        }
    }

    fn valid(r: &Rotation6D) -> bool {
        sixd_to_rotmat(r).is_ok()
    }

    proptest! {
        #[test]
        fn sixd_to_rotmat_is_orthonormal(r in arb_sixd()) {
            prop_assume!(valid(&r));
            let m = sixd_to_rotmat(&r).unwrap();
            let gram_err = (m.transpose() * m - Matrix3::identity()).abs().max();
            prop_assert!(gram_err < 1e-6);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn matrix_round_trip(r in arb_sixd()) {
            prop_assume!(valid(&r));
            let m = sixd_to_rotmat(&r).unwrap();
            let m2 = sixd_to_rotmat(&rotmat_to_sixd(&m).unwrap()).unwrap();
            prop_assert!((m - m2).abs().max() < 1e-6);
        }

        #[test]
        fn axis_angle_round_trip(r in arb_sixd()) {
            prop_assume!(valid(&r));
            let m = sixd_to_rotmat(&r).unwrap();
            let (axis, angle) = rotmat_to_axis_angle(&m);
            prop_assert!((0.0..=PI).contains(&angle));
            let m2 = axis_angle_to_rotmat(&axis, angle);
            prop_assert!((m - m2).abs().max() < 1e-5);
        }

        #[test]
        fn geodesic_matches_axis_angle_of_relative_rotation(a in arb_sixd(), b in arb_sixd()) {
            prop_assume!(valid(&a) && valid(&b));
            let (ra, rb) = (sixd_to_rotmat(&a).unwrap(), sixd_to_rotmat(&b).unwrap());
            let (_, angle) = rotmat_to_axis_angle(&(ra.transpose() * rb));
            prop_assert!((geodesic_distance(&ra, &rb) - angle).abs() < 1e-6);
        }

        #[test]
        fn geodesic_is_a_metric(a in arb_sixd(), b in arb_sixd(), c in arb_sixd()) {
            prop_assume!(valid(&a) && valid(&b) && valid(&c));
            let (ra, rb, rc) = (
                sixd_to_rotmat(&a).unwrap(),
                sixd_to_rotmat(&b).unwrap(),
                sixd_to_rotmat(&c).unwrap(),
            );
            let (ab, ba) = (geodesic_distance(&ra, &rb), geodesic_distance(&rb, &ra));
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab >= 0.0);
            let (ac, cb) = (geodesic_distance(&ra, &rc), geodesic_distance(&rc, &rb));
            prop_assert!(ab <= ac + cb + 1e-5);
        }
    }
}
