//! Procedural stand-in hand used by tests, benchmarks and the CLI default.
//!
//! Layout (meters, right hand, wrist at the origin, fingers along +y,
//! dorsal side +z, thumb toward -x):
//!
//! * palm: a tube of 9 rings x 18 vertices closed by a fan at the wrist;
//! * four fingers: tubes of 9 rings x 8 vertices plus an apex, zippered to
//!   six-vertex cells cut into the distal end of the palm;
//! * thumb: 7 rings x 8 vertices plus an apex, zippered into a hole in the
//!   radial side of the palm.
//!
//! Joints sit at ring centroids (fingertips at the apex). Skinning weights
//! ramp linearly across a band around each joint and are single-bone
//! elsewhere. The total is 512 vertices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Axis, EulerConvention, HandShapeModel, ModelParts, Skeleton, JOINT_NAMES, NUM_JOINTS, NUM_NODES, NUM_SHAPE};
use crate::linalg::{self, Vec3};

const PALM_RINGS: usize = 9;
const PALM_RING: usize = 18;
const TUBE_RING: usize = 8;
const FINGER_RINGS: usize = 9;
const THUMB_RINGS: usize = 7;
const BLEND_HALF_WIDTH: f64 = 0.005;

const ORDER: [Axis; 3] = [Axis::Twist, Axis::Splay, Axis::Bend];

struct Tube {
    /// ring vertex indices, proximal to distal
    rings: Vec<Vec<u32>>,
    apex: u32,
    /// axial coordinate of every ring and of the apex
    ring_s: Vec<f64>,
    apex_s: f64,
    /// axial coordinates of the three joints
    joint_s: [f64; 3],
    /// node ids of the three joints
    nodes: [usize; 3],
    /// ring index of each joint
    joint_rings: [usize; 3],
    base: Vec3<f64>,
    dir: Vec3<f64>,
    shape_length_basis: usize,
}

struct Builder {
    verts: Vec<Vec3<f64>>,
    faces: Vec<[u32; 3]>,
}

impl Builder {
    fn push(&mut self, p: Vec3<f64>) -> u32 {
        self.verts.push(p);
        (self.verts.len() - 1) as u32
    }

    /// Triangulate the band between two closed loops traversed in the same
    /// direction with aligned starting vertices.
    fn zipper(&mut self, a: &[u32], b: &[u32]) {
        let (m, n) = (a.len(), b.len());
        let (mut i, mut j) = (0, 0);
        let d = |p: u32, q: u32, v: &[Vec3<f64>]| linalg::norm(linalg::sub(v[p as usize], v[q as usize]));
        while i < m || j < n {
            let advance_a = if i == m {
                false
            } else if j == n {
                true
            } else {
                d(a[(i + 1) % m], b[j % n], &self.verts) < d(a[i % m], b[(j + 1) % n], &self.verts)
            };
            if advance_a {
                self.faces.push([a[i % m], a[(i + 1) % m], b[j % n]]);
                i += 1;
            } else {
                self.faces.push([a[i % m], b[(j + 1) % n], b[j % n]]);
                j += 1;
            }
        }
    }

    fn band(&mut self, a: &[u32], b: &[u32], skip: &[usize]) {
        let n = a.len();
        for i in 0..n {
            if skip.contains(&i) {
                continue;
            }
            let i1 = (i + 1) % n;
            self.faces.push([a[i], a[i1], b[i1]]);
            self.faces.push([a[i], b[i1], b[i]]);
        }
    }

    fn fan(&mut self, ring: &[u32], apex: u32) {
        let n = ring.len();
        for i in 0..n {
            self.faces.push([ring[i], ring[(i + 1) % n], apex]);
        }
    }
}

struct TubeSpec {
    base: Vec3<f64>,
    dir: Vec3<f64>,
    /// in-plane direction of ring angle 0
    e1: Vec3<f64>,
    e2: Vec3<f64>,
    ring_s: Vec<f64>,
    ring_r: Vec<f64>,
    apex_s: f64,
    joint_s: [f64; 3],
    joint_rings: [usize; 3],
    nodes: [usize; 3],
    shape_length_basis: usize,
}

fn build_tube(b: &mut Builder, spec: TubeSpec) -> Tube {
    let mut rings = Vec::with_capacity(spec.ring_s.len());
    for (&s, &r) in spec.ring_s.iter().zip(&spec.ring_r) {
        let centre = linalg::add(spec.base, linalg::scale(spec.dir, s));
        let ring: Vec<u32> = (0..TUBE_RING)
            .map(|m| {
                let psi = (135.0 - 45.0 * m as f64).to_radians();
                let off = linalg::add(linalg::scale(spec.e1, r * psi.cos()), linalg::scale(spec.e2, r * psi.sin()));
                b.push(linalg::add(centre, off))
            })
            .collect();
        rings.push(ring);
    }
    for k in 0..rings.len() - 1 {
        let (lo, hi) = (rings[k].clone(), rings[k + 1].clone());
        b.band(&lo, &hi, &[]);
    }
    let apex = b.push(linalg::add(spec.base, linalg::scale(spec.dir, spec.apex_s)));
    let last = rings.last().unwrap().clone();
    b.fan(&last, apex);
    Tube {
        rings,
        apex,
        ring_s: spec.ring_s,
        apex_s: spec.apex_s,
        joint_s: spec.joint_s,
        nodes: spec.nodes,
        joint_rings: spec.joint_rings,
        base: spec.base,
        dir: spec.dir,
        shape_length_basis: spec.shape_length_basis,
    }
}

/// Make every face agree with its neighbours, then point normals outward.
fn orient(faces: &mut [[u32; 3]], verts: &[Vec3<f64>]) {
    use std::collections::HashMap;
    let mut edge_faces: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (f, t) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let has_directed = |t: &[u32; 3], a: u32, b: u32| (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b);
    let mut done = vec![false; faces.len()];
    let mut stack = vec![0usize];
    done[0] = true;
    while let Some(f) = stack.pop() {
        let t = faces[f];
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            for &g in &edge_faces[&(a.min(b), a.max(b))] {
                if done[g] {
                    continue;
                }
                // neighbour must traverse the shared edge as (b, a)
                if has_directed(&faces[g], a, b) {
                    faces[g].swap(1, 2);
                }
                done[g] = true;
                stack.push(g);
            }
        }
    }
    let volume: f64 = faces
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| verts[i as usize]);
            linalg::dot(a, linalg::cross(b, c))
        })
        .sum();
    if volume < 0.0 {
        for t in faces.iter_mut() {
            t.swap(1, 2);
        }
    }
}

fn ramp(s: f64, joint: f64) -> f64 {
    ((s - joint) / (2.0 * BLEND_HALF_WIDTH) + 0.5).clamp(0.0, 1.0)
}

/// Skinning row for a point at axial coordinate `s` along a digit.
fn digit_weights(s: f64, tube: &Tube) -> [f64; NUM_NODES] {
    let mut w = [0.0; NUM_NODES];
    let owners = [0, tube.nodes[0], tube.nodes[1], tube.nodes[2]];
    // segment index of s
    let seg = tube.joint_s.iter().filter(|&&j| s >= j).count();
    // nearest joint decides the blend pair
    let nearest = (0..3)
        .min_by(|&a, &b| (s - tube.joint_s[a]).abs().total_cmp(&(s - tube.joint_s[b]).abs()))
        .unwrap();
    let t = ramp(s, tube.joint_s[nearest]);
    if t == 0.0 || t == 1.0 {
        w[owners[seg]] = 1.0;
    } else {
        w[owners[nearest + 1]] = t;
        w[owners[nearest]] = 1.0 - t;
    }
    w
}

/// Deterministic procedural hand for a given seed.
pub fn synth_test_model(seed: u64) -> HandShapeModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |x: f64, frac: f64| x * (1.0 + rng.random_range(-frac..frac));

    let palm_w = jitter(0.084, 0.03);
    let palm_l = jitter(0.095, 0.03);
    let palm_t = jitter(0.026, 0.03);

    let mut b = Builder { verts: Vec::with_capacity(512), faces: Vec::new() };

    // palm rings: dorsal row left to right, then palmar row right to left
    let half_height = |x: f64, w: f64| {
        let u = (x.abs() / (w / 2.0)).min(1.0);
        (palm_t / 2.0) * (1.0 - u.powi(4)).powf(0.25).max(0.55)
    };
    let ring_y = |k: usize| palm_l * k as f64 / (PALM_RINGS - 1) as f64;
    let ring_w = |k: usize| palm_w * (0.8 + 0.2 * k as f64 / (PALM_RINGS - 1) as f64);
    let mut palm: Vec<Vec<u32>> = Vec::with_capacity(PALM_RINGS);
    for k in 0..PALM_RINGS {
        let (y, w) = (ring_y(k), ring_w(k));
        let xs: Vec<f64> = (0..9).map(|i| -w / 2.0 + w * i as f64 / 8.0).collect();
        let mut ring = Vec::with_capacity(PALM_RING);
        for &x in &xs {
            ring.push(b.push([x, y, half_height(x, w)]));
        }
        for &x in xs.iter().rev() {
            ring.push(b.push([x, y, -half_height(x, w)]));
        }
        palm.push(ring);
    }
    let dorsal = |ring: &[u32], i: usize| ring[i];
    let palmar = |ring: &[u32], i: usize| ring[17 - i];

    // thumb hole: the radial side quads between rings 1..3 (edge p0 -> d0 is slot 17)
    for k in 0..PALM_RINGS - 1 {
        let skip: &[usize] = if k == 1 || k == 2 { &[17] } else { &[] };
        let (lo, hi) = (palm[k].clone(), palm[k + 1].clone());
        b.band(&lo, &hi, skip);
    }
    let wrist_cap = b.push([0.0, -0.006, 0.0]);
    let first = palm[0].clone();
    b.fan(&first, wrist_cap);

    // fingers: index, middle, ring, little
    let top = palm[PALM_RINGS - 1].clone();
    let top_w = ring_w(PALM_RINGS - 1);
    let finger_dims = [
        // proximal, middle, distal, base radius, rest splay (deg)
        (0.040, 0.024, 0.019, 0.0092, -6.0f64),
        (0.045, 0.028, 0.020, 0.0095, -1.0),
        (0.042, 0.027, 0.020, 0.0090, 4.0),
        (0.033, 0.019, 0.018, 0.0080, 10.0),
    ];
    let mut tubes = Vec::with_capacity(5);
    for (f, &(lp, lm, ld, r0, splay)) in finger_dims.iter().enumerate() {
        let (lp, lm, ld, r0) = (jitter(lp, 0.04), jitter(lm, 0.04), jitter(ld, 0.04), jitter(r0, 0.03));
        let phi = splay.to_radians() + rng_offset(seed, f);
        let dir = [phi.sin(), phi.cos(), 0.0];
        let e1 = [phi.cos(), -phi.sin(), 0.0];
        let e2 = [0.0, 0.0, 1.0];
        let xc = -top_w / 2.0 + top_w * (2 * f + 1) as f64 / 8.0;
        let base = [xc, palm_l + 0.002, 0.0];
        let s_mcp = 0.010;
        let s_pip = s_mcp + lp;
        let s_dip = s_pip + lm;
        let ring_s = vec![
            0.0,
            s_mcp,
            s_mcp + lp / 3.0,
            s_mcp + 2.0 * lp / 3.0,
            s_pip,
            s_pip + lm / 2.0,
            s_dip,
            s_dip + 0.45 * ld,
            s_dip + 0.78 * ld,
        ];
        let apex_s = s_dip + ld;
        let ring_r: Vec<f64> = ring_s
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let r = r0 * (1.0 - 0.25 * s / apex_s);
                if k == FINGER_RINGS - 1 {
                    0.72 * r
                } else {
                    r
                }
            })
            .collect();
        let node0 = 4 + 3 * f;
        let tube = build_tube(
            &mut b,
            TubeSpec {
                base,
                dir,
                e1,
                e2,
                ring_s,
                ring_r,
                apex_s,
                joint_s: [s_mcp, s_pip, s_dip],
                joint_rings: [1, 4, 6],
                nodes: [node0, node0 + 1, node0 + 2],
                shape_length_basis: 3 + f,
            },
        );
        let cell = [
            dorsal(&top, 2 * f),
            dorsal(&top, 2 * f + 1),
            dorsal(&top, 2 * f + 2),
            palmar(&top, 2 * f + 2),
            palmar(&top, 2 * f + 1),
            palmar(&top, 2 * f),
        ];
        let ring0 = tube.rings[0].clone();
        b.zipper(&cell, &ring0);
        tubes.push(tube);
    }

    // thumb, attached to the radial side hole spanning palm rings 1..3
    {
        let (lmeta, lprox, ldist, r0) = (jitter(0.040, 0.04), jitter(0.032, 0.04), jitter(0.026, 0.04), jitter(0.011, 0.03));
        let hole_y = ring_y(2);
        let hole_x = -ring_w(2) / 2.0;
        let dir = linalg::normalize([-0.8, 0.55, -0.35]);
        let e1 = linalg::normalize(linalg::sub([0.0, 1.0, 0.0], linalg::scale(dir, dir[1])));
        let e2 = linalg::normalize(linalg::cross(e1, dir));
        let base = [hole_x - 0.004, hole_y, 0.0];
        let s_cmc = 0.012;
        let s_mcp = s_cmc + lmeta;
        let s_ip = s_mcp + lprox;
        let ring_s = vec![0.0, s_cmc, s_cmc + lmeta / 2.0, s_mcp, s_mcp + lprox / 2.0, s_ip, s_ip + 0.75 * ldist];
        let apex_s = s_ip + ldist;
        let ring_r: Vec<f64> = ring_s
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let r = r0 * (1.0 - 0.25 * s / apex_s);
                if k == THUMB_RINGS - 1 {
                    0.72 * r
                } else {
                    r
                }
            })
            .collect();
        let tube = build_tube(
            &mut b,
            TubeSpec {
                base,
                dir,
                e1,
                e2,
                ring_s,
                ring_r,
                apex_s,
                joint_s: [s_cmc, s_mcp, s_ip],
                joint_rings: [1, 3, 5],
                nodes: [1, 2, 3],
                shape_length_basis: 7,
            },
        );
        let hole = [
            dorsal(&palm[1], 0),
            dorsal(&palm[2], 0),
            dorsal(&palm[3], 0),
            palmar(&palm[3], 0),
            palmar(&palm[2], 0),
            palmar(&palm[1], 0),
        ];
        let ring0 = tube.rings[0].clone();
        b.zipper(&hole, &ring0);
        tubes.insert(0, tube);
    }

    let Builder { verts, mut faces } = b;
    orient(&mut faces, &verts);
    let nv = verts.len();

    // skinning and digit membership
    let mut weights = vec![[0.0; NUM_NODES]; nv];
    let mut digit_of: Vec<Option<(usize, f64)>> = vec![None; nv];
    for row in weights.iter_mut() {
        row[0] = 1.0;
    }
    for (t, tube) in tubes.iter().enumerate() {
        for (ring, &s) in tube.rings.iter().zip(&tube.ring_s) {
            for &v in ring {
                weights[v as usize] = digit_weights(s, tube);
                digit_of[v as usize] = Some((t, s));
            }
        }
        weights[tube.apex as usize] = digit_weights(tube.apex_s, tube);
        digit_of[tube.apex as usize] = Some((t, tube.apex_s));
    }

    // joint regressor: ring centroids, apex for tips
    let mut regressor = vec![vec![0.0; nv]; NUM_JOINTS];
    for &v in &palm[0] {
        regressor[0][v as usize] = 1.0 / PALM_RING as f64;
    }
    for (t, tube) in tubes.iter().enumerate() {
        for (k, &node) in tube.nodes.iter().enumerate() {
            for &v in &tube.rings[tube.joint_rings[k]] {
                regressor[node][v as usize] = 1.0 / TUBE_RING as f64;
            }
        }
        regressor[16 + t][tube.apex as usize] = 1.0;
    }

    // shape bases
    let mut bases = vec![[[0.0; NUM_SHAPE]; 3]; nv];
    for (v, basis) in bases.iter_mut().enumerate() {
        let p = verts[v];
        let mut set = |k: usize, d: Vec3<f64>| {
            for c in 0..3 {
                basis[c][k] = d[c];
            }
        };
        set(0, linalg::scale(p, 0.04));
        match digit_of[v] {
            None => {
                set(1, [0.05 * p[0], 0.0, 0.0]);
                set(2, [0.0, 0.05 * p[1], 0.0]);
                set(9, [0.0, 0.0, 0.08 * p[2]]);
            }
            Some((t, s)) => {
                let tube = &tubes[t];
                set(1, [0.05 * tube.base[0], 0.0, 0.0]);
                set(2, [0.0, 0.05 * tube.base[1], 0.0]);
                set(tube.shape_length_basis, linalg::scale(tube.dir, 0.06 * s));
                let axis_point = linalg::add(tube.base, linalg::scale(tube.dir, s));
                set(8, linalg::scale(linalg::sub(p, axis_point), 0.08));
            }
        }
    }

    let names: Vec<String> = JOINT_NAMES[..NUM_NODES].iter().map(|s| s.to_string()).collect();
    let mut parents = vec![None; NUM_NODES];
    for digit in 0..5 {
        let n0 = 1 + 3 * digit;
        parents[n0] = Some(0);
        parents[n0 + 1] = Some(n0);
        parents[n0 + 2] = Some(n0 + 1);
    }
    let mut rest_joints = vec![[0.0; 3]; NUM_NODES];
    for (j, p) in rest_joints.iter_mut().enumerate() {
        for (v, &w) in regressor[j].iter().enumerate() {
            if w != 0.0 {
                *p = linalg::add(*p, linalg::scale(verts[v], w));
            }
        }
    }

    let mut conventions = Vec::with_capacity(15);
    for (t, tube) in tubes.iter().enumerate() {
        let palmar_dir = if t == 0 { [0.6, 0.0, -0.8] } else { [0.0, 0.0, -1.0] };
        let twist = tube.dir;
        let p = linalg::normalize(linalg::sub(palmar_dir, linalg::scale(twist, linalg::dot(palmar_dir, twist))));
        let bend = linalg::cross(twist, p);
        let splay = linalg::scale(p, -1.0);
        for _ in 0..3 {
            conventions.push(EulerConvention { axes: [bend, splay, twist], order: ORDER });
        }
    }

    HandShapeModel::new(ModelParts {
        template_vertices: verts,
        faces,
        skeleton: Skeleton { names, parents, rest_joints },
        shape_bases: bases,
        joint_regressor: regressor,
        skinning_weights: weights,
        euler_conventions: conventions,
    })
    .expect("procedural hand satisfies the model invariants")
}

/// Small seed-dependent tilt of each finger's rest direction (radians).
fn rng_offset(seed: u64, finger: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(finger as u64 + 1));
    rng.random_range(-1.5f64..1.5).to_radians()
}
