//! JSON model file: a versioned, self-describing container with flat
//! row-major arrays whose lengths are checked against the declared sizes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Axis, EulerConvention, HandShapeModel, ModelError, ModelParts, Skeleton, NUM_JOINTS, NUM_NODES,
    NUM_POSE_JOINTS, NUM_SHAPE,
};

pub const MODEL_FORMAT: &str = "handfit-model";
pub const MODEL_VERSION: &str = "1.0";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: String,
    pub num_vertices: usize,
    pub num_faces: usize,
    pub num_joints: usize,
    pub num_nodes: usize,
    pub num_shape: usize,
    /// `V x 3`
    pub template_vertices: Vec<f64>,
    /// `F x 3`
    pub faces: Vec<u32>,
    pub skeleton: SkeletonRecord,
    /// `V x 3 x num_shape`
    pub shape_bases: Vec<f64>,
    /// `num_joints x V`
    pub joint_regressor: Vec<f64>,
    /// `V x num_nodes`
    pub skinning_weights: Vec<f64>,
    pub euler_conventions: Vec<ConventionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonRecord {
    pub names: Vec<String>,
    /// `-1` marks the root.
    pub parents: Vec<i64>,
    /// `num_nodes x 3`
    pub rest_joints: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConventionRecord {
    pub joint: String,
    pub bend_axis: [f64; 3],
    pub splay_axis: [f64; 3],
    pub twist_axis: [f64; 3],
    pub order: [Axis; 3],
}

fn expect_len(name: &str, got: usize, want: usize) -> Result<(), ModelError> {
    if got != want {
        return Err(ModelError::Schema(format!("{name}: expected {want} values, found {got}")));
    }
    Ok(())
}

fn major(version: &str) -> Option<&str> {
    version.split('.').next()
}

impl ModelFile {
    pub fn from_model(model: &HandShapeModel<f64>) -> Self {
        let p = model.parts();
        let nv = p.template_vertices.len();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION.into(),
            num_vertices: nv,
            num_faces: p.faces.len(),
            num_joints: NUM_JOINTS,
            num_nodes: NUM_NODES,
            num_shape: NUM_SHAPE,
            template_vertices: p.template_vertices.iter().flatten().copied().collect(),
            faces: p.faces.iter().flatten().copied().collect(),
            skeleton: SkeletonRecord {
                names: p.skeleton.names.clone(),
                parents: p.skeleton.parents.iter().map(|q| q.map_or(-1, |x| x as i64)).collect(),
                rest_joints: p.skeleton.rest_joints.iter().flatten().copied().collect(),
            },
            shape_bases: p.shape_bases.iter().flatten().flatten().copied().collect(),
            joint_regressor: p.joint_regressor.iter().flatten().copied().collect(),
            skinning_weights: p.skinning_weights.iter().flatten().copied().collect(),
            euler_conventions: p
                .euler_conventions
                .iter()
                .enumerate()
                .map(|(j, c)| ConventionRecord {
                    joint: p.skeleton.names[j + 1].clone(),
                    bend_axis: c.axes[0],
                    splay_axis: c.axes[1],
                    twist_axis: c.axes[2],
                    order: c.order,
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<HandShapeModel<f64>, ModelError> {
        if self.format != MODEL_FORMAT {
            return Err(ModelError::Schema(format!("unknown format tag {:?}", self.format)));
        }
        if major(&self.version) != major(MODEL_VERSION) {
            return Err(ModelError::Version(self.version));
        }
        if self.num_joints != NUM_JOINTS || self.num_nodes != NUM_NODES || self.num_shape != NUM_SHAPE {
            return Err(ModelError::Schema(format!(
                "expected {NUM_JOINTS} joints, {NUM_NODES} nodes and {NUM_SHAPE} shape coefficients"
            )));
        }
        let nv = self.num_vertices;
        expect_len("template_vertices", self.template_vertices.len(), nv * 3)?;
        expect_len("faces", self.faces.len(), self.num_faces * 3)?;
        expect_len("shape_bases", self.shape_bases.len(), nv * 3 * NUM_SHAPE)?;
        expect_len("joint_regressor", self.joint_regressor.len(), NUM_JOINTS * nv)?;
        expect_len("skinning_weights", self.skinning_weights.len(), nv * NUM_NODES)?;
        expect_len("skeleton.names", self.skeleton.names.len(), NUM_NODES)?;
        expect_len("skeleton.parents", self.skeleton.parents.len(), NUM_NODES)?;
        expect_len("skeleton.rest_joints", self.skeleton.rest_joints.len(), NUM_NODES * 3)?;
        expect_len("euler_conventions", self.euler_conventions.len(), NUM_POSE_JOINTS)?;

        let triples = |xs: &[f64]| -> Vec<[f64; 3]> { xs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
        let parents = self
            .skeleton
            .parents
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(ModelError::Schema(format!("invalid parent index {p}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (j, c) in self.euler_conventions.iter().enumerate() {
            if c.joint != self.skeleton.names[j + 1] {
                return Err(ModelError::Schema(format!(
                    "euler convention {j} is for {:?}, expected {:?}",
                    c.joint,
                    self.skeleton.names[j + 1]
                )));
            }
        }

        let parts = ModelParts {
            template_vertices: triples(&self.template_vertices),
            faces: self.faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            skeleton: Skeleton {
                names: self.skeleton.names,
                parents,
                rest_joints: triples(&self.skeleton.rest_joints),
            },
            shape_bases: self
                .shape_bases
                .chunks_exact(3 * NUM_SHAPE)
                .map(|c| {
                    let mut b = [[0.0; NUM_SHAPE]; 3];
                    for (coord, row) in b.iter_mut().enumerate() {
                        row.copy_from_slice(&c[coord * NUM_SHAPE..(coord + 1) * NUM_SHAPE]);
                    }
                    b
                })
                .collect(),
            joint_regressor: self.joint_regressor.chunks_exact(nv).map(|r| r.to_vec()).collect(),
            skinning_weights: self
                .skinning_weights
                .chunks_exact(NUM_NODES)
                .map(|r| {
                    let mut w = [0.0; NUM_NODES];
                    w.copy_from_slice(r);
                    w
                })
                .collect(),
            euler_conventions: self
                .euler_conventions
                .iter()
                .map(|c| EulerConvention { axes: [c.bend_axis, c.splay_axis, c.twist_axis], order: c.order })
                .collect(),
        };
        HandShapeModel::new(parts)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HandShapeModel<f64>, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Schema(e.to_string()))?;
    file.into_model()
}

pub fn save_model(model: &HandShapeModel<f64>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let text = serde_json::to_string(&ModelFile::from_model(model)).expect("model serializes");
    std::fs::write(path, text).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}
