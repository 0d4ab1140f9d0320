//! Self-penetration: generalized winding numbers, the geodesic neighbour
//! mask, the interior vertex set and the non-penetration loss.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::hand_model::{Articulation, HandShapeModel, NUM_NODES};
use crate::linalg::{self, Vec3};
use crate::scalar::Real;

/// Geodesic exclusion radius, meters.
pub const DEFAULT_RADIUS: f64 = 0.02;
/// Penetration tolerance, meters.
pub const DEFAULT_D_TOL: f64 = 0.006;
/// Inside cutoff for winding numbers against a closed mesh.
pub const INSIDE_THRESHOLD: f64 = 0.5;
/// Inside cutoff for the neighbour-masked self-intersection test.
///
/// Concave creases reach about 0.6 once their own patch is removed, while a
/// vertex embedded in another part scores about 1.
pub const DEFAULT_WINDING_THRESHOLD: f64 = 0.8;

/// Signed solid angle of triangle `(a, b, c)` seen from the origin.
#[inline]
pub fn solid_angle(a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64>) -> f64 {
    let (la, lb, lc) = (linalg::norm(a), linalg::norm(b), linalg::norm(c));
    let num = linalg::dot(a, linalg::cross(b, c));
    let den = la * lb * lc + linalg::dot(a, b) * lc + linalg::dot(b, c) * la + linalg::dot(c, a) * lb;
    2.0 * num.atan2(den)
}

fn winding_raw(vertices: &[Vec3<f64>], faces: &[[u32; 3]], p: Vec3<f64>, skip: impl Fn(&[u32; 3]) -> bool) -> f64 {
    let mut total = 0.0;
    for t in faces {
        if skip(t) {
            continue;
        }
        let a = linalg::sub(vertices[t[0] as usize], p);
        let b = linalg::sub(vertices[t[1] as usize], p);
        let c = linalg::sub(vertices[t[2] as usize], p);
        total += solid_angle(a, b, c);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Winding number of `p` against the unskipped faces.
///
/// A query sitting on a vertex of a counted face is nudged by
/// `1e-9 * diag` along a fixed direction before evaluation.
fn winding_with_skip(
    vertices: &[Vec3<f64>],
    faces: &[[u32; 3]],
    p: Vec3<f64>,
    diag: f64,
    skip: impl Fn(&[u32; 3]) -> bool + Copy,
) -> f64 {
    let eps = 1e-12 * diag;
    let coincident = faces
        .iter()
        .filter(|t| !skip(t))
        .any(|t| t.iter().any(|&v| linalg::norm(linalg::sub(vertices[v as usize], p)) <= eps));
    let q = if coincident {
        let dir = linalg::normalize([1.0, 2.0, 3.0]);
        linalg::add(p, linalg::scale(dir, 1e-9 * diag))
    } else {
        p
    };
    winding_raw(vertices, faces, q, skip)
}

fn to_f64<T: Real>(vertices: &[Vec3<T>]) -> Vec<Vec3<f64>> {
    vertices.iter().map(|v| v.map(|x| x.re())).collect()
}

/// Generalized winding number of each query against the closed mesh.
pub fn winding_numbers<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]], queries: &[Vec3<f64>]) -> Vec<f64> {
    let verts = to_f64(vertices);
    let diag = crate::hand_model::bbox_diagonal(&verts);
    queries.iter().map(|&q| winding_with_skip(&verts, faces, q, diag, |_| false)).collect()
}

/// Vertices within a geodesic radius of each vertex on the rest mesh.
///
/// Symmetric, and every vertex belongs to its own set.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMask {
    radius: f64,
    nv: usize,
    words: usize,
    bits: Vec<u64>,
}

impl NeighborMask {
    #[inline]
    pub fn contains(&self, v: usize, u: usize) -> bool {
        self.bits[v * self.words + u / 64] >> (u % 64) & 1 == 1
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.nv).filter(|&u| self.contains(v, u)).collect()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn num_vertices(&self) -> usize {
        self.nv
    }

    fn set(&mut self, v: usize, u: usize) {
        self.bits[v * self.words + u / 64] |= 1 << (u % 64);
    }

    #[inline]
    fn touches_face(&self, v: usize, t: &[u32; 3]) -> bool {
        t.iter().any(|&u| self.contains(v, u as usize))
    }
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn edge_graph<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]]) -> Vec<Vec<(usize, f64)>> {
    let verts = to_f64(vertices);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); verts.len()];
    for t in faces {
        for k in 0..3 {
            let (a, b) = (t[k] as usize, t[(k + 1) % 3] as usize);
            if !adj[a].iter().any(|&(x, _)| x == b) {
                let w = linalg::norm(linalg::sub(verts[a], verts[b]));
                adj[a].push((b, w));
                adj[b].push((a, w));
            }
        }
    }
    adj
}

/// Dijkstra over the rest-pose edge graph, Euclidean edge lengths.
pub fn build_neighbor_mask<T: Real>(model: &HandShapeModel<T>, radius: f64) -> NeighborMask {
    let nv = model.num_vertices();
    let adj = edge_graph(model.template_vertices(), model.faces());
    let words = nv.div_ceil(64);
    let mut mask = NeighborMask { radius, nv, words, bits: vec![0; nv * words] };
    let mut dist = vec![f64::INFINITY; nv];
    let mut touched = Vec::new();
    for src in 0..nv {
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        touched.push(src);
        heap.push(Frontier(0.0, src));
        while let Some(Frontier(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            mask.set(src, v);
            for &(u, w) in &adj[v] {
                let nd = d + w;
                if nd <= radius && nd < dist[u] {
                    if dist[u].is_infinite() {
                        touched.push(u);
                    }
                    dist[u] = nd;
                    heap.push(Frontier(nd, u));
                }
            }
        }
        for v in touched.drain(..) {
            dist[v] = f64::INFINITY;
        }
    }
    // union with the transpose so rounding at the radius cannot break symmetry
    for v in 0..nv {
        for u in 0..v {
            if mask.contains(v, u) || mask.contains(u, v) {
                mask.set(v, u);
                mask.set(u, v);
            }
        }
    }
    mask
}

/// One member of the interior set `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorVertex {
    pub vertex: u32,
    pub winding: f64,
    /// `d(v)`: distance to the nearest vertex outside the mask, meters.
    pub depth: f64,
    /// The vertex realising `depth`.
    pub partner: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteriorSet {
    pub members: Vec<InteriorVertex>,
}

impl InteriorSet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn vertices(&self) -> Vec<u32> {
        self.members.iter().map(|m| m.vertex).collect()
    }

    /// Largest `d(v)`, 0 when empty.
    pub fn max_depth(&self) -> f64 {
        self.members.iter().map(|m| m.depth).fold(0.0, f64::max)
    }
}

fn nearest_outside(mask: &NeighborMask, verts: &[Vec3<f64>], v: usize) -> Option<(u32, f64)> {
    let p = verts[v];
    let mut best: Option<(u32, f64)> = None;
    for (u, &q) in verts.iter().enumerate() {
        if mask.contains(v, u) {
            continue;
        }
        let d2 = {
            let e = linalg::sub(p, q);
            linalg::dot(e, e)
        };
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((u as u32, d2));
        }
    }
    best.map(|(u, d2)| (u, d2.sqrt()))
}

fn classify(
    verts: &[Vec3<f64>],
    faces: &[[u32; 3]],
    mask: &NeighborMask,
    diag: f64,
    threshold: f64,
    v: usize,
) -> Option<InteriorVertex> {
    let w = winding_with_skip(verts, faces, verts[v], diag, |t| mask.touches_face(v, t));
    if w <= threshold {
        return None;
    }
    let (partner, depth) = nearest_outside(mask, verts, v)?;
    Some(InteriorVertex { vertex: v as u32, winding: w, depth, partner })
}

/// Interior set by testing every vertex against every unmasked face.
pub fn interior_vertices<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]], mask: &NeighborMask) -> InteriorSet {
    interior_vertices_with(vertices, faces, mask, DEFAULT_WINDING_THRESHOLD)
}

pub fn interior_vertices_with<T: Real>(
    vertices: &[Vec3<T>],
    faces: &[[u32; 3]],
    mask: &NeighborMask,
    threshold: f64,
) -> InteriorSet {
    let verts = to_f64(vertices);
    let diag = crate::hand_model::bbox_diagonal(&verts);
    let members = (0..verts.len()).filter_map(|v| classify(&verts, faces, mask, diag, threshold, v)).collect();
    InteriorSet { members }
}

/// `sum_{v in M} max(d(v) - d_tol, 0)`.
pub fn non_penetration_loss(interior: &InteriorSet, d_tol: f64) -> f64 {
    interior.members.iter().map(|m| (m.depth - d_tol).max(0.0)).sum()
}

/// Eq. 4 with `d(v)` re-evaluated from positions of scalar type `S`.
///
/// Membership and partners come from `interior`; only distances carry
/// derivatives.
pub fn non_penetration_loss_at<S: Real>(
    interior: &InteriorSet,
    d_tol: f64,
    mut position: impl FnMut(u32) -> Vec3<S>,
) -> S {
    let tol = S::lift(d_tol);
    let mut total = S::zero();
    for m in &interior.members {
        let d = linalg::norm(linalg::sub(position(m.vertex), position(m.partner)));
        total += (d - tol).max(S::zero());
    }
    total
}

/// Max `d(v)` over the interior set; 0 when empty.
pub fn penetration_depth<T: Real>(vertices: &[Vec3<T>], faces: &[[u32; 3]], mask: &NeighborMask) -> f64 {
    interior_vertices(vertices, faces, mask).max_depth()
}

/// Per-model acceleration data for repeated interior queries.
///
/// Vertices are grouped by their dominant skinning bone. A vertex is only
/// tested exactly when it falls inside the bone-local bounding box of a
/// segment other than its own, its parent's or its children's, and that
/// segment is not wholly within the vertex's geodesic mask.
///
/// `Segments` therefore misses a segment pushed into its parent, which the
/// joint limits normally rule out; `Exhaustive` tests every vertex.
#[derive(Debug, Clone)]
pub struct PenetrationIndex {
    mask: NeighborMask,
    faces: Vec<[u32; 3]>,
    /// vertices of each segment plus their one-ring
    segments: Vec<Vec<u32>>,
    /// per vertex, bit `g` set when segment `g` must be checked
    relevant: Vec<u16>,
    diag: f64,
    threshold: f64,
}

/// How candidates for the exact winding test are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadPhase {
    Segments,
    Exhaustive,
}

impl PenetrationIndex {
    pub fn new<T: Real>(model: &HandShapeModel<T>, radius: f64, threshold: f64) -> Self {
        let mask = build_neighbor_mask(model, radius);
        let nv = model.num_vertices();
        let faces = model.faces().to_vec();
        let owner: Vec<usize> = model
            .skinning_weights()
            .iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..NUM_NODES {
                    if row[k].re() > row[best].re() {
                        best = k;
                    }
                }
                best
            })
            .collect();
        let mut in_segment = vec![vec![false; nv]; NUM_NODES];
        for t in &faces {
            for &a in t {
                let g = owner[a as usize];
                for &b in t {
                    in_segment[g][b as usize] = true;
                }
            }
        }
        let segments: Vec<Vec<u32>> = in_segment
            .iter()
            .map(|flags| (0..nv as u32).filter(|&v| flags[v as usize]).collect())
            .collect();
        let parents = &model.skeleton().parents;
        let related = |a: usize, b: usize| a == b || parents[a] == Some(b) || parents[b] == Some(a);
        let relevant = (0..nv)
            .map(|v| {
                let mut bits = 0u16;
                for (g, seg) in segments.iter().enumerate() {
                    if related(owner[v], g) {
                        continue;
                    }
                    if !seg.is_empty() && seg.iter().any(|&u| !mask.contains(v, u as usize)) {
                        bits |= 1 << g;
                    }
                }
                bits
            })
            .collect();
        let diag = crate::hand_model::bbox_diagonal(model.template_vertices());
        PenetrationIndex { mask, faces, segments, relevant, diag, threshold }
    }

    pub fn mask(&self) -> &NeighborMask {
        &self.mask
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Interior set of a posed mesh; `art` supplies the segment frames.
    pub fn interior(&self, vertices: &[Vec3<f64>], art: &Articulation<f64>, mode: BroadPhase) -> InteriorSet {
        let diag = crate::hand_model::bbox_diagonal(vertices).max(self.diag * 1e-3);
        let candidates: Vec<usize> = match mode {
            BroadPhase::Exhaustive => (0..vertices.len()).collect(),
            BroadPhase::Segments => self.candidates(vertices, art),
        };
        let members = candidates
            .into_iter()
            .filter_map(|v| classify(vertices, &self.faces, &self.mask, diag, self.threshold, v))
            .collect();
        InteriorSet { members }
    }

    fn candidates(&self, vertices: &[Vec3<f64>], art: &Articulation<f64>) -> Vec<usize> {
        let to_local = |g: usize, p: Vec3<f64>| {
            let r = &art.rotations[g];
            linalg::mat_vec(&linalg::transpose(r), linalg::sub(p, art.translations[g]))
        };
        let boxes: Vec<Option<(Vec3<f64>, Vec3<f64>)>> = self
            .segments
            .iter()
            .enumerate()
            .map(|(g, seg)| {
                if seg.is_empty() {
                    return None;
                }
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for &v in seg {
                    let q = to_local(g, vertices[v as usize]);
                    for c in 0..3 {
                        lo[c] = lo[c].min(q[c]);
                        hi[c] = hi[c].max(q[c]);
                    }
                }
                Some((lo, hi))
            })
            .collect();
        (0..vertices.len())
            .filter(|&v| {
                let bits = self.relevant[v];
                (0..NUM_NODES).any(|g| {
                    if bits >> g & 1 == 0 {
                        return false;
                    }
                    let Some((lo, hi)) = boxes[g] else { return false };
                    let q = to_local(g, vertices[v]);
                    (0..3).all(|c| q[c] >= lo[c] && q[c] <= hi[c])
                })
            })
            .collect()
    }
}

/// Posed `f64` mesh and articulation for the segment broad phase.
pub fn posed_for_contact<T: Real>(
    model: &HandShapeModel<T>,
    theta: &crate::hand_model::Theta<f64>,
    beta: &crate::hand_model::Beta<f64>,
) -> (Vec<Vec3<f64>>, Articulation<f64>) {
    let art = model.articulate(None, theta, beta);
    let verts = (0..model.num_vertices()).map(|v| model.skin_vertex(&art, v)).collect();
    (verts, art)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::synth_test_model;

    /// Subdivided icosahedron projected to a sphere, outward faces.
    pub(crate) fn icosphere(radius: f64, levels: usize) -> (Vec<Vec3<f64>>, Vec<[u32; 3]>) {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vec3<f64>> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut f: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut cache = std::collections::HashMap::new();
            let mut mid = |a: u32, b: u32, v: &mut Vec<Vec3<f64>>| -> u32 {
                *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(linalg::scale(linalg::add(v[a as usize], v[b as usize]), 0.5));
                    (v.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(f.len() * 4);
            for &[a, b, c] in &f {
                let ab = mid(a, b, &mut v);
                let bc = mid(b, c, &mut v);
                let ca = mid(c, a, &mut v);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            f = next;
        }
        let v = v.into_iter().map(|p| linalg::scale(linalg::normalize(p), radius)).collect();
        (v, f)
    }

    #[test]
    fn icosphere_centre_and_far_point() {
        let (v, f) = icosphere(1.0, 2);
        let w = winding_numbers(&v, &f, &[[0.0; 3], [10.0, 0.0, 0.0], [0.3, -0.2, 0.1]]);
        assert!((w[0] - 1.0).abs() < 1e-6);
        assert!(w[1].abs() < 1e-6);
        assert!((w[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn query_on_a_vertex_is_perturbed_not_nan() {
        let (v, f) = icosphere(1.0, 1);
        let w = winding_numbers(&v, &f, &[v[0]]);
        assert!(w[0].is_finite());
        assert!(w[0] > -1e-6 && w[0] < 1.0 + 1e-6);
    }

    #[test]
    fn loss_hinge_arithmetic() {
        let one = |depth| InteriorSet {
            members: vec![InteriorVertex { vertex: 0, winding: 1.0, depth, partner: 1 }],
        };
        assert!((non_penetration_loss(&one(0.008), 0.006) - 0.002).abs() < 1e-15);
        assert_eq!(non_penetration_loss(&one(0.005), 0.006), 0.0);
        assert_eq!(non_penetration_loss(&InteriorSet::default(), 0.006), 0.0);
    }

    #[test]
    fn mask_extremes() {
        let m = synth_test_model(0);
        let zero = build_neighbor_mask(&m, 0.0);
        for v in 0..m.num_vertices() {
            assert_eq!(zero.neighbors(v), vec![v]);
        }
        let all = build_neighbor_mask(&m, 10.0);
        assert!((0..m.num_vertices()).all(|v| all.neighbors(v).len() == m.num_vertices()));
    }

    #[test]
    fn mask_is_symmetric_and_reflexive() {
        let m = synth_test_model(2);
        let mask = build_neighbor_mask(&m, DEFAULT_RADIUS);
        let n = m.num_vertices();
        for v in 0..n {
            assert!(mask.contains(v, v));
            for u in 0..n {
                assert_eq!(mask.contains(v, u), mask.contains(u, v));
            }
        }
    }

    #[test]
    fn rest_pose_has_no_interior_vertices() {
        for seed in 0..12 {
            let m = synth_test_model(seed);
            let mask = build_neighbor_mask(&m, DEFAULT_RADIUS);
            let set = interior_vertices(m.template_vertices(), m.faces(), &mask);
            assert!(set.is_empty(), "seed {seed}: {:?}", set.members);
        }
    }
}
