//! Fixed-size 3D vector and matrix helpers over [`Real`].
//!
//! Matrices are row-major `[[S; 3]; 3]`.

use crate::scalar::Real;

pub type Vec3<S> = [S; 3];
pub type Mat3<S> = [[S; 3]; 3];

#[inline]
pub fn lift3<S: Real>(v: &[f64; 3]) -> Vec3<S> {
    [S::lift(v[0]), S::lift(v[1]), S::lift(v[2])]
}

#[inline]
pub fn add<S: Real>(a: Vec3<S>, b: Vec3<S>) -> Vec3<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<S: Real>(a: Vec3<S>, b: Vec3<S>) -> Vec3<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<S: Real>(a: Vec3<S>, k: S) -> Vec3<S> {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn dot<S: Real>(a: Vec3<S>, b: Vec3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<S: Real>(a: Vec3<S>, b: Vec3<S>) -> Vec3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<S: Real>(a: Vec3<S>) -> S {
    dot(a, a).sqrt()
}

pub fn normalize<S: Real>(a: Vec3<S>) -> Vec3<S> {
    let n = norm(a);
    scale(a, n.recip())
}

#[inline]
pub fn identity<S: Real>() -> Mat3<S> {
    let (o, z) = (S::one(), S::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

#[inline]
pub fn mat_vec<S: Real>(m: &Mat3<S>, v: Vec3<S>) -> Vec3<S> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul<S: Real>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<S: Real>(m: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn lift_mat<S: Real>(m: &Mat3<f64>) -> Mat3<S> {
    [lift3(&m[0]), lift3(&m[1]), lift3(&m[2])]
}

pub fn det<S: Real>(m: &Mat3<S>) -> S {
    dot(m[0], cross(m[1], m[2]))
}

/// Rotation matrix from an axis-angle vector (Rodrigues).
///
/// Uses a Taylor expansion near zero so derivatives stay finite at the
/// identity.
pub fn axis_angle<S: Real>(r: Vec3<S>) -> Mat3<S> {
    let theta2 = dot(r, r);
    let (a, b) = if theta2.re() < 1e-8 {
        // sin(t)/t and (1 - cos t)/t^2 to fourth order
        let a = S::one() - theta2 / S::lift(6.0) + theta2 * theta2 / S::lift(120.0);
        let b = S::lift(0.5) - theta2 / S::lift(24.0) + theta2 * theta2 / S::lift(720.0);
        (a, b)
    } else {
        let theta = theta2.sqrt();
        let (s, c) = theta.sin_cos();
        (s / theta, (S::one() - c) / theta2)
    };
    let k = [
        [S::zero(), -r[2], r[1]],
        [r[2], S::zero(), -r[0]],
        [-r[1], r[0], S::zero()],
    ];
    let k2 = mat_mul(&k, &k);
    let mut out = identity();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    out
}

/// Rotation about a coordinate axis (0 = x, 1 = y, 2 = z).
pub fn coordinate_rotation<S: Real>(axis: usize, angle: S) -> Mat3<S> {
    let (s, c) = angle.sin_cos();
    let (o, z) = (S::one(), S::zero());
    match axis {
        0 => [[o, z, z], [z, c, -s], [z, s, c]],
        1 => [[c, z, s], [z, o, z], [-s, z, c]],
        _ => [[c, -s, z], [s, c, z], [z, z, o]],
    }
}

/// Axis-angle vector of a rotation matrix (inverse of [`axis_angle`]).
pub fn matrix_to_axis_angle(m: &Mat3<f64>) -> Vec3<f64> {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let cos = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let w = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if angle < 1e-9 {
        return scale(w, 0.5);
    }
    if std::f64::consts::PI - angle < 1e-6 {
        // near pi: axis from the symmetric part
        let mut best = 0;
        for i in 1..3 {
            if m[i][i] > m[best][best] {
                best = i;
            }
        }
        let mut axis = [0.0; 3];
        axis[best] = ((m[best][best] + 1.0) / 2.0).max(0.0).sqrt();
        for i in 0..3 {
            if i != best {
                axis[i] = (m[best][i] + m[i][best]) / (4.0 * axis[best]);
            }
        }
        return scale(normalize(axis), angle);
    }
    scale(w, angle / (2.0 * angle.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_angle_round_trip() {
        for r in [[0.3f64, -0.2, 0.9], [1e-7, 0.0, 2e-7], [0.0, 3.0, 0.0], [-2.0, 1.0, 0.5]] {
            let m = axis_angle(r);
            assert!((det(&m) - 1.0).abs() < 1e-12);
            let back = matrix_to_axis_angle(&m);
            for i in 0..3 {
                assert!((back[i] - r[i]).abs() < 1e-9, "{r:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn series_branch_matches_closed_form() {
        // just inside the series branch
        let t = 0.9999e-4f64;
        let series = axis_angle([t, 0.0, 0.0]);
        let closed = [[1.0, 0.0, 0.0], [0.0, t.cos(), -t.sin()], [0.0, t.sin(), t.cos()]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((series[i][j] - closed[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coordinate_rotation_matches_axis_angle() {
        for axis in 0..3 {
            let mut r = [0.0f64; 3];
            r[axis] = 0.7;
            let a = axis_angle(r);
            let b = coordinate_rotation(axis, 0.7);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-14);
                }
            }
        }
    }
}
