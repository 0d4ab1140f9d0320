//! Hand pose and shape fitting from 2D landmarks with biomechanical,
//! anatomical and non-penetration priors.
//!
//! Numerical kernels are generic over [`Real`]; the aliases at the bottom
//! of this file name the common `f32` / `f64` instantiations.

pub mod camera;
pub mod dataset;
pub mod dual;
pub mod fitter;
pub mod hand_model;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod penetration;
pub mod pose_prior;
pub mod records;
pub mod scalar;

pub use camera::{project, CameraParams, Intrinsics, ProjectionError};
pub use dual::Dual;
pub use hand_model::{
    forward_kinematics, load_model, save_model, synth_test_model, HandMesh, HandShapeModel, ModelError,
    PoseState, NUM_JOINTS, NUM_NODES, NUM_POSE_JOINTS, NUM_SHAPE,
};
pub use scalar::Real;

pub type HandShapeModelF64 = HandShapeModel<f64>;
pub type HandShapeModelF32 = HandShapeModel<f32>;
pub type HandMeshF64 = HandMesh<f64>;
pub type HandMeshF32 = HandMesh<f32>;
pub type PoseStateF64 = PoseState<f64>;
pub type PoseStateF32 = PoseState<f32>;
pub type CameraParamsF64 = CameraParams<f64>;
pub type CameraParamsF32 = CameraParams<f32>;
