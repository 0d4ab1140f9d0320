//! Brute-force inside/outside by ray casting.

#![allow(dead_code)]

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Moller-Trumbore; true when the ray hits the triangle at t > 0.
fn hits(origin: V, dir: V, a: V, b: V, c: V) -> bool {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let p = cross(dir, e2);
    let det = dot(e1, p);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let s = sub(origin, a);
    let u = dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = cross(s, e1);
    let v = dot(dir, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    dot(e2, q) * inv > 1e-12
}

pub fn crossings(vertices: &[V], faces: &[[u32; 3]], origin: V, dir: V) -> usize {
    faces
        .iter()
        .filter(|f| hits(origin, dir, vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]))
        .count()
}

/// Fixed, generic ray directions.
pub const DIRECTIONS: [V; 3] = [
    [0.5377, 0.8339, -0.1247],
    [-0.7071, 0.3125, 0.6343],
    [0.2117, -0.6071, 0.7659],
];

/// Odd-crossing majority vote over three rays.
pub fn inside(vertices: &[V], faces: &[[u32; 3]], q: V) -> bool {
    DIRECTIONS.iter().filter(|&&d| crossings(vertices, faces, q, d) % 2 == 1).count() >= 2
}

/// Winding numbers this close to one half sit on the surface and are not compared.
pub const SURFACE_BAND: f64 = 0.02;
