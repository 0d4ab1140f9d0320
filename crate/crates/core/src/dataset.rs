//! Samples with optional ground truth, landmark noise profiles and the
//! synthetic benchmark generator.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, CameraParams, Intrinsics};
use crate::hand_model::{forward_kinematics, Beta, HandShapeModel, Theta, NUM_JOINTS, NUM_POSE_JOINTS};
use crate::likelihood::LandmarkObservation;
use crate::linalg::{self, Vec3};
use crate::penetration::{posed_for_contact, BroadPhase, PenetrationIndex};
use crate::pose_prior::{pose_loss, refine_limits, AnatomyOptions, JointLimitTable};

/// Ground truth of a synthetic sample; joints and vertices in the model frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: Theta<f64>,
    pub beta: Beta<f64>,
    pub camera: CameraParams<f64>,
    pub joints: Vec<Vec3<f64>>,
    pub vertices: Vec<Vec3<f64>>,
    /// Noise-free projections of `joints`.
    pub landmarks: Vec<[f64; 2]>,
    /// Joints hit by the `corrupt` noise kind.
    #[serde(default)]
    pub corrupted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub source_id: String,
    pub observation: LandmarkObservation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("bad noise profile {0:?}: expected clean, gaussian:S, corrupt:K:S or occlude:K joined by '+'")]
    Profile(String),
    #[error("sample {source_id}: ground truth is inconsistent ({what} off by {err:e})")]
    Inconsistent { source_id: String, what: &'static str, err: f64 },
    #[error("sample {0}: record and observation ids differ")]
    IdMismatch(String),
    #[error("could not draw a feasible pose in {0} attempts")]
    Exhausted(usize),
}

/// One landmark perturbation; profiles chain several.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// i.i.d. Gaussian on every coordinate, pixels.
    Gaussian(f64),
    /// Gaussian of `sigma` pixels on `k` random joints.
    Corrupt { k: usize, sigma: f64 },
    /// `k` random joints marked invisible.
    Occlude(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseProfile(pub Vec<Noise>);

impl NoiseProfile {
    pub fn clean() -> Self {
        NoiseProfile(Vec::new())
    }

    /// Sorted indices of the joints hit by `Corrupt`.
    pub fn apply(&self, obs: &mut LandmarkObservation, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut corrupted = Vec::new();
        for n in &self.0 {
            match *n {
                Noise::Gaussian(s) => {
                    let d = Normal::new(0.0, s).expect("finite sigma");
                    for p in obs.positions.iter_mut() {
                        p[0] += d.sample(rng);
                        p[1] += d.sample(rng);
                    }
                }
                Noise::Corrupt { k, sigma } => {
                    let d = Normal::new(0.0, sigma).expect("finite sigma");
                    let mut picked = sample_indices(rng, NUM_JOINTS, k.min(NUM_JOINTS)).into_vec();
                    picked.sort_unstable();
                    for &j in &picked {
                        obs.positions[j][0] += d.sample(rng);
                        obs.positions[j][1] += d.sample(rng);
                    }
                    corrupted.extend(picked);
                }
                Noise::Occlude(k) => {
                    let mut picked = sample_indices(rng, NUM_JOINTS, k.min(NUM_JOINTS)).into_vec();
                    picked.sort_unstable();
                    for &j in &picked {
                        obs.visibility[j] = false;
                        obs.positions[j] = [0.0, 0.0];
                    }
                }
            }
        }
        corrupted.sort_unstable();
        corrupted.dedup();
        corrupted
    }
}

impl FromStr for NoiseProfile {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::Profile(s.to_string());
        let num = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(bad);
        let count = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let mut out = Vec::new();
        for part in s.split('+').map(str::trim) {
            let fields: Vec<&str> = part.split(':').collect();
            match fields.as_slice() {
                ["clean"] => {}
                ["gaussian", sd] => out.push(Noise::Gaussian(num(sd)?)),
                ["corrupt", k, sd] => out.push(Noise::Corrupt { k: count(k)?, sigma: num(sd)? }),
                ["occlude", k] => out.push(Noise::Occlude(count(k)?)),
                _ => return Err(bad()),
            }
        }
        Ok(NoiseProfile(out))
    }
}

impl fmt::Display for NoiseProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "clean");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|n| match n {
                Noise::Gaussian(s) => format!("gaussian:{s}"),
                Noise::Corrupt { k, sigma } => format!("corrupt:{k}:{sigma}"),
                Noise::Occlude(k) => format!("occlude:{k}"),
            })
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Settings of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n: usize,
    pub noise: NoiseProfile,
    pub seed: u64,
    pub intrinsics: Intrinsics,
    pub anatomy: AnatomyOptions,
    /// Standard deviation of every shape coefficient.
    pub beta_sigma: f64,
    /// Largest out-of-plane tilt of the palm away from the image plane, radians.
    pub max_tilt: f64,
    /// Range of the camera scale `s`.
    pub scale_range: [f64; 2],
    /// Largest offset of the hand centre from the optical axis, meters.
    pub max_offset: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n: 100,
            noise: NoiseProfile::clean(),
            seed: 0,
            intrinsics: Intrinsics::default(),
            anatomy: AnatomyOptions::default(),
            beta_sigma: 0.3,
            max_tilt: 40f64.to_radians(),
            scale_range: [5.5, 8.0],
            max_offset: 0.01,
        }
    }
}

const MAX_ATTEMPTS: usize = 100_000;

/// Uniform draw from the refined-feasible, interior-free part of the static box.
pub fn sample_pose(
    model: &HandShapeModel<f64>,
    limits: &JointLimitTable,
    index: &PenetrationIndex,
    anatomy: AnatomyOptions,
    beta: &Beta<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Theta<f64>, DatasetError> {
    for _ in 0..MAX_ATTEMPTS {
        let mut theta = [[0.0; 3]; NUM_POSE_JOINTS];
        for (j, row) in theta.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let [lo, hi] = limits.ranges()[j][a];
                *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            }
        }
        if pose_loss(&theta, &refine_limits(limits, &theta, anatomy)) > 0.0 {
            continue;
        }
        let (verts, art) = posed_for_contact(model, &theta, beta);
        if index.interior(&verts, &art, BroadPhase::Exhaustive).is_empty() {
            return Ok(theta);
        }
    }
    Err(DatasetError::Exhausted(MAX_ATTEMPTS))
}

/// Palm or back toward the camera, tilted up to `max_tilt`, any roll, with
/// the joint centroid near the optical axis.
pub fn sample_camera(joints: &[Vec3<f64>], opts: &SynthOptions, rng: &mut ChaCha8Rng) -> CameraParams<f64> {
    let base = if rng.random_bool(0.5) {
        linalg::identity()
    } else {
        linalg::coordinate_rotation(1, std::f64::consts::PI)
    };
    let psi = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt = opts.max_tilt * rng.random_range(0.0f64..=1.0).sqrt();
    let roll = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let r = linalg::mat_mul(
        &linalg::coordinate_rotation(2, roll),
        &linalg::mat_mul(&linalg::axis_angle([tilt * psi.cos(), tilt * psi.sin(), 0.0]), &base),
    );
    let n = joints.len() as f64;
    let c = joints.iter().fold([0.0; 3], |a, p| linalg::add(a, *p));
    let c = linalg::mat_vec(&r, linalg::scale(c, 1.0 / n));
    let mut off = || rng.random_range(-opts.max_offset..=opts.max_offset);
    let t = [off() - c[0], off() - c[1]];
    let scale = rng.random_range(opts.scale_range[0]..=opts.scale_range[1]);
    CameraParams::new(scale, linalg::matrix_to_axis_angle(&r), t)
}

/// `n` samples with ids `synth-000000`, `synth-000001`, ...
pub fn synthesize(
    model: &HandShapeModel<f64>,
    limits: &JointLimitTable,
    index: &PenetrationIndex,
    opts: &SynthOptions,
) -> Result<Vec<SampleRecord>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.beta_sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let beta: Beta<f64> = std::array::from_fn(|_| normal.sample(&mut rng));
        let theta = sample_pose(model, limits, index, opts.anatomy, &beta, &mut rng)?;
        let mesh = forward_kinematics(model, &theta, &beta);
        let (camera, landmarks) = loop {
            let cam = sample_camera(&mesh.joints, opts, &mut rng);
            if let Ok(uv) = project(&mesh.joints, &cam, &opts.intrinsics) {
                break (cam, uv);
            }
        };
        let source_id = format!("synth-{i:06}");
        let mut observation = LandmarkObservation::new(source_id.clone(), landmarks.clone());
        let corrupted = opts.noise.apply(&mut observation, &mut rng);
        out.push(SampleRecord {
            source_id,
            observation,
            ground_truth: Some(GroundTruth {
                theta,
                beta,
                camera,
                joints: mesh.joints,
                vertices: mesh.vertices,
                landmarks,
                corrupted,
            }),
        });
    }
    Ok(out)
}

impl SampleRecord {
    /// FK and projection of the stored ground truth reproduce its joints,
    /// vertices and clean landmarks within `1e-6`.
    pub fn check_consistency(&self, model: &HandShapeModel<f64>, intr: &Intrinsics) -> Result<(), DatasetError> {
        if self.observation.source_id != self.source_id {
            return Err(DatasetError::IdMismatch(self.source_id.clone()));
        }
        let Some(gt) = &self.ground_truth else { return Ok(()) };
        let incons = |what, err| DatasetError::Inconsistent { source_id: self.source_id.clone(), what, err };
        let mesh = forward_kinematics(model, &gt.theta, &gt.beta);
        let dist3 = |a: &[Vec3<f64>], b: &[Vec3<f64>]| {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            a.iter().zip(b).map(|(p, q)| linalg::norm(linalg::sub(*p, *q))).fold(0.0, f64::max)
        };
        let e = dist3(&mesh.joints, &gt.joints);
        if !(e <= 1e-6) {
            return Err(incons("joints", e));
        }
        let e = dist3(&mesh.vertices, &gt.vertices);
        if !(e <= 1e-6) {
            return Err(incons("vertices", e));
        }
        let uv = project(&mesh.joints, &gt.camera, intr).map_err(|_| incons("landmarks", f64::INFINITY))?;
        let e = if uv.len() == gt.landmarks.len() {
            uv.iter()
                .zip(&gt.landmarks)
                .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        if !(e <= 1e-6) {
            return Err(incons("landmarks", e));
        }
        Ok(())
    }
}
