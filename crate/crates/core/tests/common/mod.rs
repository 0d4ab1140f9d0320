#![allow(dead_code)]

pub mod parity;

use handfit::dataset::{synthesize, SampleRecord, SynthOptions};
use handfit::penetration::{PenetrationIndex, DEFAULT_RADIUS, DEFAULT_WINDING_THRESHOLD};
use handfit::pose_prior::JointLimitTable;
use handfit::{synth_test_model, CameraParams, HandShapeModel, PoseState, NUM_JOINTS, NUM_POSE_JOINTS};
use rand::Rng;

pub fn model() -> HandShapeModel<f64> {
    synth_test_model(0)
}

pub fn samples(model: &HandShapeModel<f64>, n: usize, noise: &str, seed: u64) -> Vec<SampleRecord> {
    let limits = JointLimitTable::default();
    let index = PenetrationIndex::new(model, DEFAULT_RADIUS, DEFAULT_WINDING_THRESHOLD);
    let opts = SynthOptions { n, noise: noise.parse().unwrap(), seed, ..Default::default() };
    synthesize(model, &limits, &index, &opts).unwrap()
}

/// Angles up to 15 degrees past the static limits, small shape, a camera
/// jittered around `camera` and sigmas across the clamp range.
pub fn random_state(rng: &mut impl Rng, limits: &JointLimitTable, camera: &CameraParams<f64>) -> PoseState<f64> {
    let margin = 15f64.to_radians();
    let mut state = PoseState::rest(*camera, 8.0);
    for j in 0..NUM_POSE_JOINTS {
        for a in 0..3 {
            let [lo, hi] = limits.ranges()[j][a];
            state.theta[j][a] = rng.random_range(lo - margin..=hi + margin);
        }
    }
    for b in &mut state.beta {
        *b = rng.random_range(-1.0..1.0);
    }
    state.camera.scale *= rng.random_range(0.9..1.1);
    for r in &mut state.camera.rotation {
        *r += rng.random_range(-0.1..0.1);
    }
    for t in &mut state.camera.translation {
        *t += rng.random_range(-0.005..0.005);
    }
    for j in 0..NUM_JOINTS {
        state.log_sigma[j] = rng.random_range(0.3f64.ln()..80f64.ln());
    }
    state
}
