//! Flat state vector and the generic loss evaluation behind both gradient backends.

use crate::camera::{project, CameraParams, Intrinsics, ProjectionError};
use crate::dual::Dual;
use crate::hand_model::{posed_joints, Beta, HandShapeModel, PoseState, Theta, NUM_JOINTS, NUM_POSE_JOINTS, NUM_SHAPE};
use crate::likelihood::{mse_loss, nll_loss, LandmarkDistribution, LandmarkObservation};
use crate::penetration::{non_penetration_loss_at, InteriorSet};
use crate::pose_prior::{pose_loss, refine_limits, shape_loss, AnatomyOptions, JointLimitTable, PriorWeights};
use crate::scalar::Real;

use super::Stage;

pub const THETA_LEN: usize = 3 * NUM_POSE_JOINTS;
pub const BETA_OFF: usize = THETA_LEN;
pub const LOG_SCALE: usize = BETA_OFF + NUM_SHAPE;
pub const ROT_OFF: usize = LOG_SCALE + 1;
pub const TRANS_OFF: usize = ROT_OFF + 3;
pub const SIGMA_OFF: usize = TRANS_OFF + 2;
pub const STATE_DIM: usize = SIGMA_OFF + NUM_JOINTS;
/// Entries that move during the MSE stage.
pub const MSE_DIM: usize = SIGMA_OFF;

/// Layout: theta (row-major) | beta | log s | R | t | log sigma.
pub fn pack(state: &PoseState<f64>) -> [f64; STATE_DIM] {
    let mut x = [0.0; STATE_DIM];
    for (j, row) in state.theta.iter().enumerate() {
        x[3 * j..3 * j + 3].copy_from_slice(row);
    }
    x[BETA_OFF..LOG_SCALE].copy_from_slice(&state.beta);
    x[LOG_SCALE] = state.camera.scale.ln();
    x[ROT_OFF..TRANS_OFF].copy_from_slice(&state.camera.rotation);
    x[TRANS_OFF..SIGMA_OFF].copy_from_slice(&state.camera.translation);
    x[SIGMA_OFF..].copy_from_slice(&state.log_sigma);
    x
}

pub fn unpack(x: &[f64; STATE_DIM]) -> PoseState<f64> {
    PoseState {
        theta: theta_of(x),
        beta: beta_of(x),
        camera: camera_of(x),
        log_sigma: std::array::from_fn(|j| x[SIGMA_OFF + j]),
    }
}

pub fn theta_of<S: Real>(x: &[S]) -> Theta<S> {
    std::array::from_fn(|j| [x[3 * j], x[3 * j + 1], x[3 * j + 2]])
}

pub fn beta_of<S: Real>(x: &[S]) -> Beta<S> {
    std::array::from_fn(|k| x[BETA_OFF + k])
}

pub fn camera_of<S: Real>(x: &[S]) -> CameraParams<S> {
    CameraParams::new(
        x[LOG_SCALE].exp(),
        [x[ROT_OFF], x[ROT_OFF + 1], x[ROT_OFF + 2]],
        [x[TRANS_OFF], x[TRANS_OFF + 1]],
    )
}

/// Weighted loss terms at one point.
#[derive(Debug, Clone, Copy)]
pub struct Terms<S> {
    pub data: S,
    pub pose: S,
    pub penetration: S,
    pub shape: S,
}

impl<S: Real> Terms<S> {
    pub fn total(&self) -> S {
        self.data + self.pose + self.penetration + self.shape
    }

    pub fn named(&self) -> [(&'static str, S); 4] {
        [("data", self.data), ("pose", self.pose), ("penetration", self.penetration), ("shape", self.shape)]
    }
}

/// Immutable inputs of one objective.
pub struct Objective<'a> {
    pub model: &'a HandShapeModel<f64>,
    pub limits: &'a JointLimitTable,
    pub anatomy: AnatomyOptions,
    pub weights: PriorWeights,
    pub d_tol: f64,
    pub intrinsics: Intrinsics,
    pub obs: &'a LandmarkObservation,
}

impl Objective<'_> {
    /// All weighted terms; `plan` fixes the interior set and partners.
    pub fn terms<S: Real>(&self, x: &[S], stage: Stage, plan: &InteriorSet) -> Result<Terms<S>, ProjectionError> {
        let theta = theta_of(x);
        let beta = beta_of(x);
        let art = self.model.articulate(None, &theta, &beta);
        let joints = posed_joints(self.model, &art);
        let mu = project(&joints, &camera_of(x), &self.intrinsics)?;
        let data = match stage {
            Stage::Mse => mse_loss(&mu, self.obs),
            Stage::Nll => nll_loss(&LandmarkDistribution::from_log_sigma(mu, &x[SIGMA_OFF..]), self.obs),
        };
        let w = &self.weights;
        let pose = if w.lambda1 == 0.0 {
            S::zero()
        } else {
            S::lift(w.lambda1) * pose_loss(&theta, &refine_limits(self.limits, &theta, self.anatomy))
        };
        let penetration = if w.lambda2 == 0.0 || plan.is_empty() {
            S::zero()
        } else {
            S::lift(w.lambda2) * non_penetration_loss_at(plan, self.d_tol, |v| self.model.skin_vertex(&art, v as usize))
        };
        let shape = if w.lambda3 == 0.0 { S::zero() } else { S::lift(w.lambda3) * shape_loss(&beta) };
        Ok(Terms { data, pose, penetration, shape })
    }

    /// Forward-mode gradient over the first `N` state entries.
    pub fn autodiff<const N: usize>(
        &self,
        x: &[f64; STATE_DIM],
        stage: Stage,
        plan: &InteriorSet,
    ) -> Result<Terms<Dual<f64, N>>, ProjectionError> {
        let xd: Vec<Dual<f64, N>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < N { Dual::variable(v, i) } else { Dual::constant(v) })
            .collect();
        self.terms(&xd, stage, plan)
    }
}
