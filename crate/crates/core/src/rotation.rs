//! 3×3 rotation matrices: validation and constructors.

use crate::error::{Error, Result};

/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

/// Tolerance on orthonormality and determinant; absorbs serialization rounding.
pub const ROTATION_TOL: f64 = 1e-5;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Returns whether `m` is a proper rotation within [`ROTATION_TOL`].
///
/// Non-finite entries are reported as an error rather than `false`, so that
/// corrupt data is distinguishable from a well-formed non-rotation.
pub fn validate_rotation(m: &Mat3) -> Result<bool> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rotation matrix".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    let det = determinant(m);
    Ok(worst <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL)
}

pub fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rotation by `angle` radians about `axis` (Rodrigues). A zero axis gives the identity.
pub fn axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if n == 0.0 || angle == 0.0 {
        return IDENTITY;
    }
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rotation matrix of the quaternion `(w, x, y, z)`, normalized first.
pub fn from_quaternion(q: [f64; 4]) -> Mat3 {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Axis-angle vector (rotation vector) of a rotation matrix.
pub fn log_map(m: &Mat3) -> [f64; 3] {
    let cos = ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if angle < 1e-12 {
        return [v[0] / 2.0, v[1] / 2.0, v[2] / 2.0];
    }
    let s = angle.sin();
    if s.abs() < 1e-9 {
        // Angle near pi: recover the axis from the symmetric part.
        let d = [m[0][0], m[1][1], m[2][2]];
        let k = (0..3).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap_or(0);
        let mut axis = [0.0; 3];
        axis[k] = ((d[k] + 1.0) / 2.0).max(0.0).sqrt();
        for j in 0..3 {
            if j != k {
                axis[j] = (m[k][j] + m[j][k]) / (4.0 * axis[k]);
            }
        }
        return [axis[0] * angle, axis[1] * angle, axis[2] * angle];
    }
    let f = angle / (2.0 * s);
    [v[0] * f, v[1] * f, v[2] * f]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_rotation() {
        assert!(validate_rotation(&IDENTITY).unwrap());
    }

    #[test]
    fn reflection_is_rejected() {
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(!validate_rotation(&m).unwrap());
    }

    #[test]
    fn non_finite_is_an_error_not_false() {
        let mut m = IDENTITY;
        m[1][2] = f64::NAN;
        assert!(matches!(validate_rotation(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn quaternion_rotation_is_orthonormal() {
        let r = from_quaternion([0.1, 0.2, 0.3, 0.4]);
        // independent check of R^T R = I
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        assert!(validate_rotation(&r).unwrap());
    }

    #[test]
    fn axis_angle_log_map_round_trip() {
        let v = [0.3, -0.5, 0.2];
        let n = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let r = axis_angle(v, n.sqrt());
        let back = log_map(&r);
        for k in 0..3 {
            assert!((back[k] - v[k]).abs() < 1e-12, "{back:?}");
        }
        assert!(validate_rotation(&mul(&r, &r)).unwrap());
    }
}
