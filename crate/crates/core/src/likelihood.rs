//! Per-joint isotropic Gaussian over 2D landmarks and the data terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand_model::NUM_JOINTS;
use crate::scalar::Real;

pub const SIGMA_MIN: f64 = 0.5;
pub const SIGMA_MAX: f64 = 64.0;
/// Fewest visible joints that still pin down a similarity camera.
pub const MIN_VISIBLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservationError {
    #[error("sample {source_id}: expected {NUM_JOINTS} landmarks, found {found}")]
    WrongCount { source_id: String, found: usize },
    #[error("sample {source_id}: visible landmark {joint} is not finite")]
    NonFinite { source_id: String, joint: usize },
    #[error("sample {source_id}: only {visible} visible joints, need at least {MIN_VISIBLE}")]
    InsufficientJoints { source_id: String, visible: usize },
}

/// 2D landmarks of one image, pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkObservation {
    pub source_id: String,
    pub positions: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    /// Optional annotator confidence per joint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<f64>>,
}

impl LandmarkObservation {
    pub fn new(source_id: impl Into<String>, positions: Vec<[f64; 2]>) -> Self {
        let n = positions.len();
        LandmarkObservation { source_id: source_id.into(), positions, visibility: vec![true; n], confidence: None }
    }

    pub fn num_visible(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }

    /// Shape and finiteness checks; does not enforce the visibility floor.
    pub fn check(&self) -> Result<(), ObservationError> {
        if self.positions.len() != NUM_JOINTS || self.visibility.len() != NUM_JOINTS {
            return Err(ObservationError::WrongCount {
                source_id: self.source_id.clone(),
                found: self.positions.len().min(self.visibility.len()),
            });
        }
        for (j, (p, &vis)) in self.positions.iter().zip(&self.visibility).enumerate() {
            if vis && !(p[0].is_finite() && p[1].is_finite()) {
                return Err(ObservationError::NonFinite { source_id: self.source_id.clone(), joint: j });
            }
        }
        Ok(())
    }

    /// [`check`](Self::check) plus the minimum visible-joint count.
    pub fn check_usable(&self) -> Result<(), ObservationError> {
        self.check()?;
        let visible = self.num_visible();
        if visible < MIN_VISIBLE {
            return Err(ObservationError::InsufficientJoints { source_id: self.source_id.clone(), visible });
        }
        Ok(())
    }
}

/// Mean and standard deviation of each landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkDistribution<S> {
    pub mu: Vec<[S; 2]>,
    pub sigma: Vec<S>,
}

/// `log sigma` restricted to `[ln SIGMA_MIN, ln SIGMA_MAX]`.
pub fn clamp_log_sigma<S: Real>(log_sigma: S) -> S {
    log_sigma.max(S::lift(SIGMA_MIN.ln())).min(S::lift(SIGMA_MAX.ln()))
}

impl<S: Real> LandmarkDistribution<S> {
    /// Build from log standard deviations, clamping into the valid range.
    pub fn from_log_sigma(mu: Vec<[S; 2]>, log_sigma: &[S]) -> Self {
        let sigma = log_sigma.iter().map(|&l| clamp_log_sigma(l).exp()).collect();
        LandmarkDistribution { mu, sigma }
    }
}

/// `sum_i [2 log sigma_i + |p_i - mu_i|^2 / (2 sigma_i^2)]` over visible joints,
/// i.e. `log sigma + r^2 / (2 sigma^2)` per coordinate.
pub fn nll_loss<S: Real>(dist: &LandmarkDistribution<S>, obs: &LandmarkObservation) -> S {
    let two = S::lift(2.0);
    let mut total = S::zero();
    for j in 0..obs.positions.len() {
        if !obs.visibility[j] {
            continue;
        }
        let sigma = dist.sigma[j].max(S::lift(SIGMA_MIN)).min(S::lift(SIGMA_MAX));
        let rx = S::lift(obs.positions[j][0]) - dist.mu[j][0];
        let ry = S::lift(obs.positions[j][1]) - dist.mu[j][1];
        total += two * sigma.ln() + (rx * rx + ry * ry) / (two * sigma * sigma);
    }
    total
}

/// Mean squared residual over visible coordinates; 0 with a warning when
/// nothing is visible.
pub fn mse_loss<S: Real>(mu: &[[S; 2]], obs: &LandmarkObservation) -> S {
    let mut total = S::zero();
    let mut count = 0usize;
    for j in 0..obs.positions.len() {
        if !obs.visibility[j] {
            continue;
        }
        for c in 0..2 {
            let r = S::lift(obs.positions[j][c]) - mu[j][c];
            total += r * r;
        }
        count += 2;
    }
    if count == 0 {
        log::warn!("sample {}: no visible landmarks, data term is 0", obs.source_id);
        return S::zero();
    }
    total / S::lift(count as f64)
}
