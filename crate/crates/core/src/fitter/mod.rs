//! Per-sample optimization of pose, shape, camera and landmark uncertainty.
//!
//! Stage 0 aligns a camera to the rest pose, stage 1 minimizes the prior plus
//! an MSE data term over (theta, beta, C), stage 2 switches to the NLL and
//! also frees `log sigma`.

mod batch;
mod init;
pub mod objective;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Intrinsics, DEFAULT_FOCAL, DEFAULT_IMAGE_SIZE};
use crate::hand_model::{forward_kinematics, HandMesh, HandShapeModel, PoseState, Theta, NUM_POSE_JOINTS};
use crate::likelihood::{LandmarkObservation, ObservationError, SIGMA_MAX, SIGMA_MIN};
use crate::penetration::{
    posed_for_contact, BroadPhase, InteriorSet, PenetrationIndex, DEFAULT_D_TOL, DEFAULT_RADIUS,
    DEFAULT_WINDING_THRESHOLD,
};
use crate::pose_prior::{AnatomyOptions, JointLimitTable, PriorWeights};

pub use batch::{fit_batch, BatchItem};
pub use init::{digit_seed, initial_camera, CameraGuess};
use objective::{Objective, Terms, LOG_SCALE, MSE_DIM, SIGMA_OFF, STATE_DIM, TRANS_OFF};
pub use objective::{pack, unpack};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.9;
/// Rate multiplier after an accepted step, capped at `step_size`.
const RATE_GROWTH: f64 = 1.2;
const ADAM_EPS: f64 = 1e-8;
/// Halvings tried within one iteration before giving up on a step.
const MAX_RETRIES: usize = 8;
/// A stage stops early once its rate has fallen this far below `step_size`.
const MIN_RATE_FACTOR: f64 = 1e-4;
/// Step of the central-difference backend.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    ForwardModeAutodiff,
    CentralFiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mse,
    Nll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Penetration depth tolerance, meters.
    pub d_tol: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub step_size: f64,
    pub gradient_mode: GradientMode,
    pub seed: u64,
    /// Extra runs after the first; the lowest final loss wins.
    pub restarts: usize,
    pub focal: f64,
    pub image_size: f64,
    /// Dynamic MCP limits from the coupled angle.
    pub anatomy: bool,
    pub symmetric_coupling: bool,
    /// Geodesic radius of the penetration neighbour mask, meters.
    pub geodesic_radius: f64,
    pub winding_threshold: f64,
    /// Initial landmark standard deviation, pixels.
    pub sigma_init: f64,
    /// Record wall time in reports (makes them non-reproducible).
    pub record_time: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        let w = PriorWeights::default();
        FitConfig {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            d_tol: DEFAULT_D_TOL,
            stage1_iters: 300,
            stage2_iters: 300,
            step_size: 1e-2,
            gradient_mode: GradientMode::ForwardModeAutodiff,
            seed: 0,
            restarts: 2,
            focal: DEFAULT_FOCAL,
            image_size: DEFAULT_IMAGE_SIZE,
            anatomy: true,
            symmetric_coupling: true,
            geodesic_radius: DEFAULT_RADIUS,
            winding_threshold: DEFAULT_WINDING_THRESHOLD,
            sigma_init: 8.0,
            record_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        for (name, w) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(&format!("{name} must be finite and >= 0, got {w}"));
            }
        }
        if !(self.d_tol >= 0.0) {
            return bad("d_tol must be >= 0");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be > 0");
        }
        if !(self.focal > 0.0 && self.focal.is_finite() && self.image_size > 0.0 && self.image_size.is_finite()) {
            return bad("focal and image_size must be > 0");
        }
        if !(self.geodesic_radius >= 0.0 && self.geodesic_radius.is_finite()) {
            return bad("geodesic_radius must be >= 0");
        }
        if !(self.winding_threshold > 0.0 && self.winding_threshold < 1.0) {
            return bad("winding_threshold must lie in (0, 1)");
        }
        if !(SIGMA_MIN..=SIGMA_MAX).contains(&self.sigma_init) {
            return bad(&format!("sigma_init must lie in [{SIGMA_MIN}, {SIGMA_MAX}]"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: FitConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn weights(&self) -> PriorWeights {
        PriorWeights { lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3 }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics { focal: self.focal, image_size: self.image_size }
    }

    pub fn anatomy_options(&self) -> AnatomyOptions {
        AnatomyOptions { enabled: self.anatomy, symmetric: self.symmetric_coupling }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sample {source_id}: loss is not finite at the start of stage {stage:?}")]
    Diverged { source_id: String, stage: Stage },
    #[error("non-finite gradient in the {term} term")]
    NonFiniteGradient { term: &'static str },
    #[error("loss is infeasible (a joint is behind the camera)")]
    Infeasible,
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub pose: f64,
    pub penetration: f64,
    pub shape: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(t: &Terms<f64>) -> Self {
        LossBreakdown { data: t.data, pose: t.pose, penetration: t.penetration, shape: t.shape, total: t.total() }
    }

    /// Sentinel for states with a joint behind the camera.
    pub fn infeasible() -> Self {
        LossBreakdown { data: f64::INFINITY, total: f64::INFINITY, ..Default::default() }
    }

    pub fn prior(&self) -> f64 {
        self.pose + self.penetration + self.shape
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub converged: bool,
    pub initial: LossBreakdown,
    #[serde(rename = "final")]
    pub last: LossBreakdown,
}

/// Loss of the current iterate after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub stage: Stage,
    pub iteration: usize,
    pub accepted: bool,
    pub rate: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub source_id: String,
    pub status: FitStatus,
    pub state: PoseState<f64>,
    pub mesh: HandMesh<f64>,
    pub stages: Vec<StageReport>,
    pub trace: Vec<TracePoint>,
    /// Index of the winning run.
    pub restart: usize,
    /// Final total loss of every run.
    pub restart_losses: Vec<f64>,
    /// Deepest interior vertex of the final mesh, meters.
    pub penetration_depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub config: FitConfig,
}

/// 64-bit FNV-1a, for per-sample seeds independent of batch order.
pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Model, limits and config plus the derived penetration index, shared by
/// every fit of a batch.
pub struct Fitter<'a> {
    model: &'a HandShapeModel<f64>,
    limits: &'a JointLimitTable,
    config: FitConfig,
    index: PenetrationIndex,
}

/// Per-block multiplier on the step size: theta, beta, log s, R, t, log sigma.
fn block_rate(i: usize) -> f64 {
    match i {
        _ if i < LOG_SCALE => 1.0,
        LOG_SCALE => 0.2,
        _ if i < TRANS_OFF => 1.0,
        _ if i < SIGMA_OFF => 0.05,
        _ => 3.0,
    }
}

struct Run {
    x: [f64; STATE_DIM],
    stages: Vec<StageReport>,
    trace: Vec<TracePoint>,
    status: FitStatus,
    loss: LossBreakdown,
}

impl<'a> Fitter<'a> {
    pub fn new(model: &'a HandShapeModel<f64>, limits: &'a JointLimitTable, config: FitConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let index = PenetrationIndex::new(model, config.geodesic_radius, config.winding_threshold);
        Ok(Fitter { model, limits, config, index })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn model(&self) -> &HandShapeModel<f64> {
        self.model
    }

    pub fn index(&self) -> &PenetrationIndex {
        &self.index
    }

    fn objective<'b>(&'b self, obs: &'b LandmarkObservation) -> Objective<'b> {
        Objective {
            model: self.model,
            limits: self.limits,
            anatomy: self.config.anatomy_options(),
            weights: self.config.weights(),
            d_tol: self.config.d_tol,
            intrinsics: self.config.intrinsics(),
            obs,
        }
    }

    /// Interior set of the pose in `x`; empty when penetration is unweighted.
    fn plan(&self, x: &[f64; STATE_DIM]) -> InteriorSet {
        if self.config.lambda2 == 0.0 {
            return InteriorSet::default();
        }
        let theta = objective::theta_of(x);
        let beta = objective::beta_of(x);
        let (verts, art) = posed_for_contact(self.model, &theta, &beta);
        self.index.interior(&verts, &art, BroadPhase::Segments)
    }

    fn loss_with(&self, obj: &Objective, x: &[f64; STATE_DIM], stage: Stage, plan: &InteriorSet) -> LossBreakdown {
        match obj.terms(x, stage, plan) {
            Ok(t) => LossBreakdown::from_terms(&t),
            Err(_) => LossBreakdown::infeasible(),
        }
    }

    /// Total loss and its breakdown; `+inf` when a joint is behind the camera.
    pub fn total_loss(&self, state: &PoseState<f64>, obs: &LandmarkObservation, stage: Stage) -> LossBreakdown {
        let x = pack(state);
        self.loss_with(&self.objective(obs), &x, stage, &self.plan(&x))
    }

    /// Gradient over every state entry with the configured backend.
    ///
    /// Layout follows [`pack`]; `log sigma` entries are zero in the MSE stage.
    pub fn gradient(&self, state: &PoseState<f64>, obs: &LandmarkObservation, stage: Stage) -> Result<Vec<f64>, FitError> {
        self.gradient_with(state, obs, stage, self.config.gradient_mode)
    }

    pub fn gradient_with(
        &self,
        state: &PoseState<f64>,
        obs: &LandmarkObservation,
        stage: Stage,
        mode: GradientMode,
    ) -> Result<Vec<f64>, FitError> {
        let x = pack(state);
        let obj = self.objective(obs);
        let plan = self.plan(&x);
        let g = self.raw_gradient(&obj, &x, stage, &plan, mode)?;
        Ok(g.to_vec())
    }

    fn raw_gradient(
        &self,
        obj: &Objective,
        x: &[f64; STATE_DIM],
        stage: Stage,
        plan: &InteriorSet,
        mode: GradientMode,
    ) -> Result<[f64; STATE_DIM], FitError> {
        match mode {
            GradientMode::ForwardModeAutodiff => match stage {
                Stage::Mse => autodiff_gradient::<MSE_DIM>(obj, x, stage, plan),
                Stage::Nll => autodiff_gradient::<STATE_DIM>(obj, x, stage, plan),
            },
            GradientMode::CentralFiniteDifference => {
                let dim = if stage == Stage::Mse { MSE_DIM } else { STATE_DIM };
                let mut g = [0.0; STATE_DIM];
                let mut xp = *x;
                for i in 0..dim {
                    let x0 = x[i];
                    xp[i] = x0 + FD_STEP;
                    let fp = obj.terms(&xp, stage, plan).map_err(|_| FitError::Infeasible)?;
                    xp[i] = x0 - FD_STEP;
                    let fm = obj.terms(&xp, stage, plan).map_err(|_| FitError::Infeasible)?;
                    xp[i] = x0;
                    for ((name, a), (_, b)) in fp.named().into_iter().zip(fm.named()) {
                        if !(a.is_finite() && b.is_finite()) {
                            return Err(FitError::NonFiniteGradient { term: name });
                        }
                    }
                    g[i] = (fp.total() - fm.total()) / (2.0 * FD_STEP);
                }
                Ok(g)
            }
        }
    }

    /// Largest per-entry relative disagreement between the two backends.
    ///
    /// Entries are compared relative to `max(|a|, |b|, 1e-6 * max|b|, 1e-9)`.
    pub fn gradient_check(&self, state: &PoseState<f64>, obs: &LandmarkObservation, stage: Stage) -> Result<f64, FitError> {
        let ad = self.gradient_with(state, obs, stage, GradientMode::ForwardModeAutodiff)?;
        let fd = self.gradient_with(state, obs, stage, GradientMode::CentralFiniteDifference)?;
        Ok(relative_error(&ad, &fd))
    }

    /// Stages 0-2 with restarts.
    pub fn fit(&self, obs: &LandmarkObservation) -> Result<FitReport, FitError> {
        let start = Instant::now();
        obs.check_usable()?;
        let cfg = &self.config;
        let intr = cfg.intrinsics();
        let guess = initial_camera(self.model, obs, &intr).ok_or_else(|| FitError::Diverged {
            source_id: obs.source_id.clone(),
            stage: Stage::Mse,
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(&obs.source_id));
        let mut best: Option<(usize, Run)> = None;
        let mut losses = Vec::new();
        let mut last_err = None;
        // the digit grid is built from the joint ranges, so it is only used
        // when the pose prior is active
        let seeded = cfg.lambda1 > 0.0;
        let rest = [[0.0; 3]; NUM_POSE_JOINTS];
        let mut seeds = [(rest, guess.primary), (rest, guess.twin)];
        if seeded {
            let anatomy = cfg.anatomy_options();
            let (seed_p, err_p) = digit_seed(self.model, self.limits, anatomy, obs, &guess.primary, &intr);
            let (seed_t, err_t) = digit_seed(self.model, self.limits, anatomy, obs, &guess.twin, &intr);
            seeds = [(seed_p, guess.primary), (seed_t, guess.twin)];
            if err_t < err_p {
                seeds.swap(0, 1);
            }
        }
        // run 0: rest pose. Seeded: 1 and 2 start from the digit seeds under
        // both cameras, later runs perturb the better seed. Otherwise runs
        // perturb the rest pose, odd runs under the twin camera.
        for r in 0..=cfg.restarts {
            let mut state = PoseState::rest(guess.primary, cfg.sigma_init);
            if r > 0 {
                let pick = if seeded { usize::from(r == 2) } else { r % 2 };
                let (theta, camera) = seeds[pick];
                state.camera = camera;
                state.theta = if seeded && r <= 2 { theta } else { self.perturbed_theta(&theta, &mut rng) };
            }
            match self.run(obs, &state) {
                Ok(run) => {
                    losses.push(run.loss.total);
                    if best.as_ref().is_none_or(|(_, b)| run.loss.total < b.loss.total) {
                        best = Some((r, run));
                    }
                }
                Err(e) => {
                    losses.push(f64::INFINITY);
                    last_err = Some(e);
                }
            }
        }
        let Some((restart, run)) = best else {
            return Err(last_err.unwrap_or(FitError::Infeasible));
        };
        let state = unpack(&run.x);
        let mesh = forward_kinematics(self.model, &state.theta, &state.beta);
        let (verts, art) = posed_for_contact(self.model, &state.theta, &state.beta);
        let penetration_depth = self.index.interior(&verts, &art, BroadPhase::Exhaustive).max_depth();
        Ok(FitReport {
            source_id: obs.source_id.clone(),
            status: run.status,
            state,
            mesh,
            stages: run.stages,
            trace: run.trace,
            restart,
            restart_losses: losses,
            penetration_depth,
            wall_time_s: cfg.record_time.then(|| start.elapsed().as_secs_f64()),
            config: cfg.clone(),
        })
    }

    /// Uniform +-10 degrees per angle around `base`, clamped into the static
    /// limits.
    fn perturbed_theta(&self, base: &Theta<f64>, rng: &mut ChaCha8Rng) -> Theta<f64> {
        let span = 10f64.to_radians();
        let mut theta = *base;
        for (j, row) in theta.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let [lo, hi] = self.limits.ranges()[j][a];
                let u: f64 = rng.random_range(-span..=span);
                *v = (*v + u).clamp(lo, hi);
            }
        }
        theta
    }

    fn run(&self, obs: &LandmarkObservation, init: &PoseState<f64>) -> Result<Run, FitError> {
        let obj = self.objective(obs);
        let mut x = pack(init);
        let mut stages = Vec::new();
        let mut trace = Vec::new();
        let mut status = FitStatus::MaxIters;
        let mut loss = LossBreakdown::default();
        for (stage, iters) in [(Stage::Mse, self.config.stage1_iters), (Stage::Nll, self.config.stage2_iters)] {
            let (report, converged) = self.descend(&obj, &mut x, stage, iters, &mut trace)?;
            status = if converged { FitStatus::Converged } else { FitStatus::MaxIters };
            loss = report.last;
            stages.push(report);
        }
        Ok(Run { x, stages, trace, status, loss })
    }

    /// Adam with step rejection: a step is kept only if it does not raise the
    /// loss; otherwise the rate halves and the step is retried.
    fn descend(
        &self,
        obj: &Objective,
        x: &mut [f64; STATE_DIM],
        stage: Stage,
        iters: usize,
        trace: &mut Vec<TracePoint>,
    ) -> Result<(StageReport, bool), FitError> {
        let dim = if stage == Stage::Mse { MSE_DIM } else { STATE_DIM };
        let mode = self.config.gradient_mode;
        let mut plan = self.plan(x);
        let mut loss = self.loss_with(obj, x, stage, &plan);
        if !loss.total.is_finite() {
            return Err(FitError::Diverged { source_id: obj.obs.source_id.clone(), stage });
        }
        let initial = loss;
        let mut m = [0.0; STATE_DIM];
        let mut v = [0.0; STATE_DIM];
        let mut rate = self.config.step_size;
        let (mut accepted, mut rejected, mut done) = (0, 0, 0);
        let mut converged = false;
        for it in 0..iters {
            done = it + 1;
            let g = self.raw_gradient(obj, x, stage, &plan, mode)?;
            let t = (it + 1) as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let mut dir = [0.0; STATE_DIM];
            for i in 0..dim {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                dir[i] = block_rate(i) * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
            let mut step_ok = false;
            for _ in 0..MAX_RETRIES {
                let mut cand = *x;
                for i in 0..dim {
                    cand[i] -= rate * dir[i];
                }
                clamp_state(&mut cand);
                let cand_plan = self.plan(&cand);
                let cand_loss = self.loss_with(obj, &cand, stage, &cand_plan);
                if cand_loss.total <= loss.total {
                    *x = cand;
                    plan = cand_plan;
                    loss = cand_loss;
                    step_ok = true;
                    break;
                }
                rejected += 1;
                rate *= 0.5;
            }
            if step_ok {
                accepted += 1;
                rate = (rate * RATE_GROWTH).min(self.config.step_size);
            }
            trace.push(TracePoint { stage, iteration: it, accepted: step_ok, rate, loss });
            if rate < self.config.step_size * MIN_RATE_FACTOR {
                converged = true;
                break;
            }
        }
        let report = StageReport { stage, iterations: done, accepted, rejected, converged, initial, last: loss };
        Ok((report, converged))
    }
}

fn autodiff_gradient<const N: usize>(
    obj: &Objective,
    x: &[f64; STATE_DIM],
    stage: Stage,
    plan: &InteriorSet,
) -> Result<[f64; STATE_DIM], FitError> {
    let terms = obj.autodiff::<N>(x, stage, plan).map_err(|_| FitError::Infeasible)?;
    for (name, t) in terms.named() {
        if !t.re.is_finite() || t.eps.iter().any(|d| !d.is_finite()) {
            return Err(FitError::NonFiniteGradient { term: name });
        }
    }
    let total = terms.total();
    let mut g = [0.0; STATE_DIM];
    g[..N].copy_from_slice(&total.eps);
    Ok(g)
}

/// Keep `log sigma` inside its clamp so steps there are not wasted.
fn clamp_state(x: &mut [f64; STATE_DIM]) {
    let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
    for v in &mut x[SIGMA_OFF..] {
        *v = v.clamp(lo, hi);
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6 * scale).max(1e-9))
        .fold(0.0, f64::max)
}

/// [`Fitter::fit`] for a single sample.
pub fn fit(
    obs: &LandmarkObservation,
    model: &HandShapeModel<f64>,
    limits: &JointLimitTable,
    config: &FitConfig,
) -> Result<FitReport, FitError> {
    Fitter::new(model, limits, config.clone())?.fit(obs)
}
