//! Full-perspective camera `C = [s, R, t]` with a constant focal length.
//!
//! A joint `x` is placed at `R x + (t_x, t_y, t_z)` with depth
//! `t_z = 2 f / (s * image_size)`, then projected as
//! `u = f * X / Z + image_size / 2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Vec3};
use crate::scalar::Real;

pub const DEFAULT_FOCAL: f64 = 5000.0;
pub const DEFAULT_IMAGE_SIZE: f64 = 224.0;
/// Smallest admissible depth after placement, meters.
pub const Z_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct CameraParams<T = f64> {
    /// Unitless scale `s > 0`.
    pub scale: T,
    /// Axis-angle rotation, radians.
    pub rotation: Vec3<T>,
    /// In-plane translation, meters in the camera frame.
    pub translation: [T; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ProjectionError {
    #[error("joint {joint} lies behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },
    #[error("camera scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

/// Focal length and crop size shared by every projection of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub image_size: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics { focal: DEFAULT_FOCAL, image_size: DEFAULT_IMAGE_SIZE }
    }
}

impl Intrinsics {
    /// Depth that scale `s` implies.
    pub fn depth<S: Real>(&self, scale: S) -> S {
        S::lift(2.0 * self.focal / self.image_size) / scale
    }

    /// Scale that places the root at depth `z`.
    pub fn scale_for_depth(&self, z: f64) -> f64 {
        2.0 * self.focal / (self.image_size * z)
    }
}

impl<T: Real> CameraParams<T> {
    pub fn new(scale: T, rotation: Vec3<T>, translation: [T; 2]) -> Self {
        CameraParams { scale, rotation, translation }
    }

    pub fn is_finite(&self) -> bool {
        self.scale.is_finite()
            && self.rotation.iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.scale > T::zero()
    }

    /// Point in the camera frame.
    pub fn place(&self, rot: &linalg::Mat3<T>, depth: T, p: Vec3<T>) -> Vec3<T> {
        let q = linalg::mat_vec(rot, p);
        [q[0] + self.translation[0], q[1] + self.translation[1], q[2] + depth]
    }
}

/// Project joints to pixel coordinates of the `image_size` crop.
pub fn project<S: Real>(
    joints: &[Vec3<S>],
    camera: &CameraParams<S>,
    intr: &Intrinsics,
) -> Result<Vec<[S; 2]>, ProjectionError> {
    if !(camera.scale.re() > 0.0 && camera.scale.is_finite()) {
        return Err(ProjectionError::InvalidScale(camera.scale.re()));
    }
    let rot = linalg::axis_angle(camera.rotation);
    let depth = intr.depth(camera.scale);
    let f = S::lift(intr.focal);
    let c = S::lift(intr.image_size / 2.0);
    joints
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let q = camera.place(&rot, depth, p);
            if !(q[2].re() > Z_MIN) {
                return Err(ProjectionError::BehindCamera { joint: j, z: q[2].re() });
            }
            Ok([f * q[0] / q[2] + c, f * q[1] / q[2] + c])
        })
        .collect()
}
