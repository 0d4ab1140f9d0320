//! Parametric hand: template mesh, skeleton, blend bases, joint regressor and
//! skinning weights, plus forward kinematics.

mod fk;
mod io;
mod synth;

pub use fk::{forward_kinematics, forward_kinematics_rooted, posed_joints, Articulation};
pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT, MODEL_VERSION};
pub use synth::synth_test_model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraParams;
use crate::linalg::{self, Vec3};
use crate::scalar::{cast, Real};

/// Regressed joints: wrist, 15 articulated joints, 5 fingertips.
pub const NUM_JOINTS: usize = 21;
/// Skeleton nodes: wrist root plus the 15 articulated joints.
pub const NUM_NODES: usize = 16;
/// Articulated joints carrying Euler angles.
pub const NUM_POSE_JOINTS: usize = 15;
pub const NUM_SHAPE: usize = 10;

/// Names of the 21 regressed joints. Indices 0..16 are skeleton nodes.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "little_mcp",
    "little_pip",
    "little_dip",
    "thumb_tip",
    "index_tip",
    "middle_tip",
    "ring_tip",
    "little_tip",
];

pub type Theta<S> = [[S; 3]; NUM_POSE_JOINTS];
pub type Beta<S> = [S; NUM_SHAPE];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file is not valid: {0}")]
    Schema(String),
    #[error("unsupported model format version {0}")]
    Version(String),
    #[error("mesh is not watertight: {0}")]
    NonWatertight(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Rotation axes of a joint's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Bend,
    Splay,
    Twist,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Bend, Axis::Splay, Axis::Twist];

    pub fn index(self) -> usize {
        match self {
            Axis::Bend => 0,
            Axis::Splay => 1,
            Axis::Twist => 2,
        }
    }
}

/// Local frame and Euler order of one articulated joint.
///
/// `axes` holds the bend, splay and twist unit vectors in the rest frame.
/// `order[0]` is applied to a vector first, `order[2]` last.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerConvention<T = f64> {
    pub axes: [Vec3<T>; 3],
    pub order: [Axis; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T = f64> {
    pub names: Vec<String>,
    /// Parent node per node; `None` only for the wrist root.
    pub parents: Vec<Option<usize>>,
    pub rest_joints: Vec<Vec3<T>>,
}

/// Raw, unvalidated model content. [`HandShapeModel::new`] checks it.
#[derive(Debug, Clone)]
pub struct ModelParts<T = f64> {
    pub template_vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    pub skeleton: Skeleton<T>,
    /// Per vertex, per coordinate, the 10 shape-basis displacements.
    pub shape_bases: Vec<[[T; NUM_SHAPE]; 3]>,
    /// Dense `NUM_JOINTS x V` regressor.
    pub joint_regressor: Vec<Vec<T>>,
    /// Dense `V x NUM_NODES` weights.
    pub skinning_weights: Vec<[T; NUM_NODES]>,
    pub euler_conventions: Vec<EulerConvention<T>>,
}

/// Validated, immutable parametric hand.
#[derive(Debug, Clone)]
pub struct HandShapeModel<T = f64> {
    parts: ModelParts<T>,
    topo_order: Vec<usize>,
    sparse_regressor: Vec<Vec<(u32, T)>>,
    regressor_support: Vec<u32>,
    support_slot: Vec<u32>,
    sparse_weights: Vec<Vec<(u8, T)>>,
    joint_shape_dirs: Vec<[[T; NUM_SHAPE]; 3]>,
}

/// Posed mesh and its regressed joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct HandMesh<T = f64> {
    pub vertices: Vec<Vec3<T>>,
    pub joints: Vec<Vec3<T>>,
}

/// Optimization variables of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct PoseState<T = f64> {
    pub theta: Theta<T>,
    pub beta: Beta<T>,
    pub camera: CameraParams<T>,
    /// Per-joint log standard deviation of the landmark distribution (log pixels).
    pub log_sigma: [T; NUM_JOINTS],
}

impl<T: Real> PoseState<T> {
    pub fn rest(camera: CameraParams<T>, sigma: f64) -> Self {
        PoseState {
            theta: [[T::zero(); 3]; NUM_POSE_JOINTS],
            beta: [T::zero(); NUM_SHAPE],
            camera,
            log_sigma: [T::lift(sigma.ln()); NUM_JOINTS],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().flatten().all(|x| x.is_finite())
            && self.beta.iter().all(|x| x.is_finite())
            && self.camera.is_finite()
            && self.log_sigma.iter().all(|x| x.is_finite())
    }
}

const ROW_SUM_TOL: f64 = 1e-6;

fn row_sum_tol<T: Real>() -> f64 {
    ROW_SUM_TOL.max(64.0 * T::epsilon().re())
}

impl<T: Real> HandShapeModel<T> {
    /// Validate raw parts and build the model.
    ///
    /// Skinning rows are renormalized to sum to one after validation.
    /// Rows within a few ulps of one are kept bit-for-bit.
    pub fn new(mut parts: ModelParts<T>) -> Result<Self, ModelError> {
        let nv = parts.template_vertices.len();
        if nv < 4 {
            return Err(ModelError::InvalidModel(format!("need at least 4 vertices, got {nv}")));
        }
        if parts.shape_bases.len() != nv || parts.skinning_weights.len() != nv {
            return Err(ModelError::InvalidModel(
                "shape_bases and skinning_weights must have one row per vertex".into(),
            ));
        }
        if parts.joint_regressor.len() != NUM_JOINTS
            || parts.joint_regressor.iter().any(|r| r.len() != nv)
        {
            return Err(ModelError::InvalidModel(format!(
                "joint_regressor must be {NUM_JOINTS} x {nv}"
            )));
        }
        let all_finite = parts.template_vertices.iter().flatten().all(|x| x.is_finite())
            && parts.shape_bases.iter().flatten().flatten().all(|x| x.is_finite())
            && parts.joint_regressor.iter().flatten().all(|x| x.is_finite())
            && parts.skinning_weights.iter().flatten().all(|x| x.is_finite());
        if !all_finite {
            return Err(ModelError::InvalidModel("non-finite model entry".into()));
        }
        check_watertight(&parts.faces, nv)?;
        let topo_order = check_skeleton(&parts.skeleton)?;

        for (v, row) in parts.skinning_weights.iter().enumerate() {
            if row.iter().any(|w| w.re() < 0.0) {
                return Err(ModelError::InvalidModel(format!("negative skinning weight at vertex {v}")));
            }
            let sum: f64 = row.iter().map(|w| w.re()).sum();
            if (sum - 1.0).abs() > row_sum_tol::<T>() {
                return Err(ModelError::InvalidModel(format!(
                    "skinning weights of vertex {v} sum to {sum}"
                )));
            }
        }
        for (j, row) in parts.joint_regressor.iter().enumerate() {
            if row.iter().any(|w| w.re() < 0.0) {
                return Err(ModelError::InvalidModel(format!("negative regressor entry in row {j}")));
            }
            let sum: f64 = row.iter().map(|w| w.re()).sum();
            if (sum - 1.0).abs() > row_sum_tol::<T>() {
                return Err(ModelError::InvalidModel(format!("regressor row {j} sums to {sum}")));
            }
        }
        if parts.euler_conventions.len() != NUM_POSE_JOINTS {
            return Err(ModelError::InvalidModel(format!(
                "expected {NUM_POSE_JOINTS} euler conventions, got {}",
                parts.euler_conventions.len()
            )));
        }
        for (j, conv) in parts.euler_conventions.iter().enumerate() {
            check_convention(conv).map_err(|m| {
                ModelError::InvalidModel(format!("euler convention of joint {}: {m}", j + 1))
            })?;
        }

        for row in parts.skinning_weights.iter_mut() {
            let sum: T = row.iter().copied().sum();
            // leave already-normalized rows untouched so save/load is lossless
            if (sum - T::one()).abs() > T::lift(8.0) * T::epsilon() {
                for w in row.iter_mut() {
                    *w /= sum;
                }
            }
        }

        let sparse_regressor: Vec<Vec<(u32, T)>> = parts
            .joint_regressor
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| w.re() != 0.0)
                    .map(|(v, w)| (v as u32, *w))
                    .collect()
            })
            .collect();
        let mut regressor_support: Vec<u32> =
            sparse_regressor.iter().flatten().map(|(v, _)| *v).collect();
        regressor_support.sort_unstable();
        regressor_support.dedup();
        let mut support_slot = vec![u32::MAX; nv];
        for (slot, &v) in regressor_support.iter().enumerate() {
            support_slot[v as usize] = slot as u32;
        }
        let sparse_weights = parts
            .skinning_weights
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| w.re() != 0.0)
                    .map(|(k, w)| (k as u8, *w))
                    .collect()
            })
            .collect();

        let mut joint_shape_dirs = vec![[[T::zero(); NUM_SHAPE]; 3]; NUM_NODES];
        for (j, dirs) in joint_shape_dirs.iter_mut().enumerate() {
            for &(v, w) in &sparse_regressor[j] {
                let basis = &parts.shape_bases[v as usize];
                for c in 0..3 {
                    for k in 0..NUM_SHAPE {
                        dirs[c][k] += w * basis[c][k];
                    }
                }
            }
        }

        // stored rest joints must agree with the regressor on the template
        let scale = bbox_diagonal(&parts.template_vertices).max(1e-12);
        for j in 0..NUM_NODES {
            let mut p = [T::zero(); 3];
            for &(v, w) in &sparse_regressor[j] {
                p = linalg::add(p, linalg::scale(parts.template_vertices[v as usize], w));
            }
            let err = linalg::norm(linalg::sub(p, parts.skeleton.rest_joints[j])).re();
            if err > 1e-6 * scale {
                return Err(ModelError::InvalidModel(format!(
                    "rest joint {j} is {err} away from the regressed template position"
                )));
            }
        }

        Ok(HandShapeModel {
            parts,
            topo_order,
            sparse_regressor,
            regressor_support,
            support_slot,
            sparse_weights,
            joint_shape_dirs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.parts.template_vertices.len()
    }

    pub fn template_vertices(&self) -> &[Vec3<T>] {
        &self.parts.template_vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.parts.faces
    }

    pub fn skeleton(&self) -> &Skeleton<T> {
        &self.parts.skeleton
    }

    pub fn shape_bases(&self) -> &[[[T; NUM_SHAPE]; 3]] {
        &self.parts.shape_bases
    }

    pub fn joint_regressor(&self) -> &[Vec<T>] {
        &self.parts.joint_regressor
    }

    pub fn skinning_weights(&self) -> &[[T; NUM_NODES]] {
        &self.parts.skinning_weights
    }

    pub fn euler_conventions(&self) -> &[EulerConvention<T>] {
        &self.parts.euler_conventions
    }

    pub fn parts(&self) -> &ModelParts<T> {
        &self.parts
    }

    /// Vertices with a nonzero regressor weight.
    pub fn regressor_support(&self) -> &[u32] {
        &self.regressor_support
    }

    pub(crate) fn sparse_regressor(&self) -> &[Vec<(u32, T)>] {
        &self.sparse_regressor
    }

    pub(crate) fn support_slot(&self, v: u32) -> usize {
        self.support_slot[v as usize] as usize
    }

    pub(crate) fn sparse_weights(&self, v: usize) -> &[(u8, T)] {
        &self.sparse_weights[v]
    }

    pub(crate) fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub(crate) fn joint_shape_dirs(&self) -> &[[[T; NUM_SHAPE]; 3]] {
        &self.joint_shape_dirs
    }

    /// `joints = H * vertices`, summing nonzero regressor entries in vertex order.
    pub fn regress_joints<S: Real>(&self, vertices: &[Vec3<S>]) -> Vec<Vec3<S>> {
        self.sparse_regressor
            .iter()
            .map(|row| {
                let mut p = [S::zero(); 3];
                for &(v, w) in row {
                    let w: S = cast(w);
                    let x = vertices[v as usize];
                    p = [p[0] + w * x[0], p[1] + w * x[1], p[2] + w * x[2]];
                }
                p
            })
            .collect()
    }

    /// Convert every stored value to another scalar type.
    pub fn cast<U: Real>(&self) -> HandShapeModel<U> {
        let c3 = |v: &Vec3<T>| -> Vec3<U> { [cast(v[0]), cast(v[1]), cast(v[2])] };
        let parts = &self.parts;
        let new_parts = ModelParts {
            template_vertices: parts.template_vertices.iter().map(c3).collect(),
            faces: parts.faces.clone(),
            skeleton: Skeleton {
                names: parts.skeleton.names.clone(),
                parents: parts.skeleton.parents.clone(),
                rest_joints: parts.skeleton.rest_joints.iter().map(c3).collect(),
            },
            shape_bases: parts
                .shape_bases
                .iter()
                .map(|b| b.map(|row| row.map(cast)))
                .collect(),
            joint_regressor: parts
                .joint_regressor
                .iter()
                .map(|r| r.iter().map(|&w| cast(w)).collect())
                .collect(),
            skinning_weights: parts.skinning_weights.iter().map(|r| r.map(cast)).collect(),
            euler_conventions: parts
                .euler_conventions
                .iter()
                .map(|c| EulerConvention { axes: c.axes.map(|a| c3(&a)), order: c.order })
                .collect(),
        };
        // Tolerances are relative, so a validated model stays valid in any precision.
        HandShapeModel::new(new_parts).expect("casting a validated model keeps it valid")
    }
}

pub(crate) fn bbox_diagonal<T: Real>(points: &[Vec3<T>]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c].re());
            hi[c] = hi[c].max(p[c].re());
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
}

/// Every directed edge must appear once and its reverse once.
fn check_watertight(faces: &[[u32; 3]], nv: usize) -> Result<(), ModelError> {
    use std::collections::HashMap;
    if faces.is_empty() {
        return Err(ModelError::NonWatertight("mesh has no faces".into()));
    }
    let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(faces.len() * 3);
    for (f, tri) in faces.iter().enumerate() {
        if tri.iter().any(|&v| v as usize >= nv) {
            return Err(ModelError::InvalidModel(format!("face {f} references a missing vertex")));
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(ModelError::InvalidModel(format!("face {f} is degenerate")));
        }
        for k in 0..3 {
            *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
        }
    }
    for (&(a, b), &count) in &directed {
        if count != 1 {
            return Err(ModelError::NonWatertight(format!(
                "directed edge ({a}, {b}) used by {count} faces; orientation is inconsistent"
            )));
        }
        if !directed.contains_key(&(b, a)) {
            return Err(ModelError::NonWatertight(format!("edge ({a}, {b}) has only one adjacent face")));
        }
    }
    Ok(())
}

fn check_skeleton<T: Real>(sk: &Skeleton<T>) -> Result<Vec<usize>, ModelError> {
    if sk.parents.len() != NUM_NODES || sk.rest_joints.len() != NUM_NODES || sk.names.len() != NUM_NODES {
        return Err(ModelError::InvalidModel(format!("skeleton must have {NUM_NODES} nodes")));
    }
    let roots: Vec<usize> = (0..NUM_NODES).filter(|&j| sk.parents[j].is_none()).collect();
    if roots != [0] {
        return Err(ModelError::InvalidModel(format!(
            "skeleton must have exactly one root at node 0, found {roots:?}"
        )));
    }
    if sk.parents.iter().flatten().any(|&p| p >= NUM_NODES) {
        return Err(ModelError::InvalidModel("skeleton parent index out of range".into()));
    }
    // breadth-first from the root; every node must be reached exactly once
    let mut order = vec![0usize];
    let mut head = 0;
    while head < order.len() {
        let p = order[head];
        head += 1;
        for j in 0..NUM_NODES {
            if sk.parents[j] == Some(p) {
                order.push(j);
            }
        }
    }
    if order.len() != NUM_NODES {
        return Err(ModelError::InvalidModel("skeleton contains a cycle or a detached node".into()));
    }
    Ok(order)
}

fn check_convention<T: Real>(conv: &EulerConvention<T>) -> Result<(), String> {
    let mut seen = [false; 3];
    for a in conv.order {
        seen[a.index()] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err("order must be a permutation of bend, splay, twist".into());
    }
    let m = conv.axes.map(|a| a.map(|x| x.re()));
    for i in 0..3 {
        for j in 0..3 {
            let d = linalg::dot(m[i], m[j]);
            let want = if i == j { 1.0 } else { 0.0 };
            if (d - want).abs() > 1e-6 {
                return Err("axes must be orthonormal".into());
            }
        }
    }
    if linalg::det(&m) < 0.0 {
        return Err("axes must form a right-handed frame".into());
    }
    Ok(())
}
