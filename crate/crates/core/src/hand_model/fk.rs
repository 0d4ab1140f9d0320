use super::{Beta, HandMesh, HandShapeModel, Theta, NUM_NODES, NUM_SHAPE};
use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::{cast, Real};

/// Global rigid transform of every skeleton node for one (theta, beta).
///
/// A rest-frame point `p` skinned fully to node `k` moves to
/// `rotations[k] * p + translations[k]`.
#[derive(Debug, Clone)]
pub struct Articulation<S> {
    pub rotations: [Mat3<S>; NUM_NODES],
    pub translations: [Vec3<S>; NUM_NODES],
    pub beta: Beta<S>,
}

impl<T: Real> HandShapeModel<T> {
    /// Compose joint rotations down the skeleton.
    ///
    /// `root` rotates the whole hand about the world origin.
    pub fn articulate<S: Real>(
        &self,
        root: Option<&Mat3<S>>,
        theta: &Theta<S>,
        beta: &Beta<S>,
    ) -> Articulation<S> {
        let rest = self.shaped_rest_joints(beta);
        let mut rotations = [linalg::identity::<S>(); NUM_NODES];
        let mut translations = [[S::zero(); 3]; NUM_NODES];
        if let Some(q) = root {
            rotations[0] = *q;
        }
        let parents = &self.skeleton().parents;
        for &j in self.topo_order().iter().skip(1) {
            let p = parents[j].expect("non-root node has a parent");
            let local = self.local_rotation(j, &theta[j - 1]);
            let centre = rest[j];
            // about the joint centre: x -> A (x - c) + c
            let offset = linalg::sub(centre, linalg::mat_vec(&local, centre));
            rotations[j] = linalg::mat_mul(&rotations[p], &local);
            translations[j] = linalg::add(linalg::mat_vec(&rotations[p], offset), translations[p]);
        }
        Articulation { rotations, translations, beta: *beta }
    }

    /// Joint rotation in the rest frame: `I + B (E - I) B^T`.
    ///
    /// Written around the identity so a zero angle triple gives exactly `I`.
    pub fn local_rotation<S: Real>(&self, node: usize, angles: &[S; 3]) -> Mat3<S> {
        let conv = &self.euler_conventions()[node - 1];
        let mut e = linalg::identity::<S>();
        for axis in conv.order {
            let r = linalg::coordinate_rotation(axis.index(), angles[axis.index()]);
            e = linalg::mat_mul(&r, &e);
        }
        for (i, row) in e.iter_mut().enumerate() {
            row[i] -= S::one();
        }
        // columns of B are the bend/splay/twist axes
        let b: Mat3<S> = [
            [cast(conv.axes[0][0]), cast(conv.axes[1][0]), cast(conv.axes[2][0])],
            [cast(conv.axes[0][1]), cast(conv.axes[1][1]), cast(conv.axes[2][1])],
            [cast(conv.axes[0][2]), cast(conv.axes[1][2]), cast(conv.axes[2][2])],
        ];
        let mut out = linalg::mat_mul(&linalg::mat_mul(&b, &e), &linalg::transpose(&b));
        for (i, row) in out.iter_mut().enumerate() {
            row[i] += S::one();
        }
        out
    }

    /// Skeleton rest positions after the shape blend.
    pub fn shaped_rest_joints<S: Real>(&self, beta: &Beta<S>) -> [Vec3<S>; NUM_NODES] {
        let mut out = [[S::zero(); 3]; NUM_NODES];
        let dirs = self.joint_shape_dirs();
        for (j, p) in out.iter_mut().enumerate() {
            let rest = self.skeleton().rest_joints[j];
            for c in 0..3 {
                let mut x: S = cast(rest[c]);
                for k in 0..NUM_SHAPE {
                    x += cast::<T, S>(dirs[j][c][k]) * beta[k];
                }
                p[c] = x;
            }
        }
        out
    }

    /// Template vertex plus shape blend.
    #[inline]
    pub fn shaped_vertex<S: Real>(&self, v: usize, beta: &Beta<S>) -> Vec3<S> {
        let t = self.template_vertices()[v];
        let basis = &self.shape_bases()[v];
        let mut out = [cast(t[0]), cast(t[1]), cast(t[2])];
        for c in 0..3 {
            for k in 0..NUM_SHAPE {
                out[c] += cast::<T, S>(basis[c][k]) * beta[k];
            }
        }
        out
    }

    /// Linear blend skinning of one vertex, in displacement form
    /// `v + sum_k w_k (G_k v - v)` so the rest pose reproduces `v` exactly.
    #[inline]
    pub fn skin_vertex<S: Real>(&self, art: &Articulation<S>, v: usize) -> Vec3<S> {
        let rest = self.shaped_vertex(v, &art.beta);
        let mut out = rest;
        for &(k, w) in self.sparse_weights(v) {
            let k = k as usize;
            let moved = linalg::add(linalg::mat_vec(&art.rotations[k], rest), art.translations[k]);
            let w: S = cast(w);
            for c in 0..3 {
                out[c] += w * (moved[c] - rest[c]);
            }
        }
        out
    }
}

/// Pose the full mesh and regress its joints.
pub fn forward_kinematics<T: Real, S: Real>(
    model: &HandShapeModel<T>,
    theta: &Theta<S>,
    beta: &Beta<S>,
) -> HandMesh<S> {
    forward_kinematics_rooted(model, None, theta, beta)
}

/// [`forward_kinematics`] with an extra global rotation of the root about the origin.
pub fn forward_kinematics_rooted<T: Real, S: Real>(
    model: &HandShapeModel<T>,
    root: Option<&Mat3<S>>,
    theta: &Theta<S>,
    beta: &Beta<S>,
) -> HandMesh<S> {
    let art = model.articulate(root, theta, beta);
    let vertices: Vec<Vec3<S>> = (0..model.num_vertices()).map(|v| model.skin_vertex(&art, v)).collect();
    let joints = model.regress_joints(&vertices);
    HandMesh { vertices, joints }
}

/// Joints only, skinning just the vertices the regressor reads.
///
/// Bit-identical to `forward_kinematics(..).joints`.
pub fn posed_joints<T: Real, S: Real>(model: &HandShapeModel<T>, art: &Articulation<S>) -> Vec<Vec3<S>> {
    let skinned: Vec<Vec3<S>> = model
        .regressor_support()
        .iter()
        .map(|&v| model.skin_vertex(art, v as usize))
        .collect();
    model
        .sparse_regressor()
        .iter()
        .map(|row| {
            let mut p = [S::zero(); 3];
            for &(v, w) in row {
                let w: S = cast(w);
                let x = skinned[model.support_slot(v)];
                p = [p[0] + w * x[0], p[1] + w * x[1], p[2] + w * x[2]];
            }
            p
        })
        .collect()
}
