//! Small rigid-body helpers: the hat map, its inverse and unit-quaternion
//! kinematics. Quaternions use the Hamilton product and are stored as
//! `nalgebra::Quaternion` so that unnormalized integrator stages can be
//! represented.

use nalgebra::{Matrix3, Quaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = Quaternion<f64>;

/// Tolerance on the symmetric part accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-9;

/// Skew-symmetric matrix with `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`hat`].
pub fn vee(m: &Mat3) -> Result<Vec3> {
    let sym = (m + m.transpose()) * 0.5;
    let worst = sym.amax();
    if !worst.is_finite() || worst > SKEW_TOL {
        return Err(Error::NotSkewSymmetric(worst));
    }
    Ok(Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

pub fn identity_quat() -> Quat {
    Quat::new(1.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix of `q`. The input is normalized first.
pub fn quat_to_rotation(q: &Quat) -> Mat3 {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Mat3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

/// Arc-length rate `q' = q ⊗ (0, u) / 2`, the quaternion form of `R' = R hat(u)`.
#[inline]
pub fn quat_derivative(q: &Quat, u: &Vec3) -> Quat {
    let pure = Quat::new(0.0, u.x, u.y, u.z);
    (q * pure) * 0.5
}

pub fn normalized(q: &Quat) -> Quat {
    q / q.norm()
}

/// Quaternion for a rotation of `angle` radians about unit `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    Quat::new(c, a.x * s, a.y * s, a.z * s)
}
