mod common;

use handfit::fitter::{fit_batch, FitConfig, FitError, Fitter, GradientMode, Stage};
use handfit::likelihood::{LandmarkObservation, ObservationError};
use handfit::metrics::joint_error;
use handfit::pose_prior::{pose_loss, refine_limits, violations, AnatomyOptions, JointLimitTable};
use handfit::{forward_kinematics, project, CameraParams, Intrinsics, NUM_POSE_JOINTS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn rest_projection_is_recovered() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let camera = CameraParams::new(6.5, [2.9, 0.2, -0.1], [0.0, 0.01]);
    let mesh = forward_kinematics(&model, &[[0.0; 3]; NUM_POSE_JOINTS], &[0.0; 10]);
    let obs = LandmarkObservation::new("rest", project(&mesh.joints, &camera, &Intrinsics::default()).unwrap());
    let fitter = Fitter::new(&model, &limits, FitConfig::default()).unwrap();
    let report = fitter.fit(&obs).unwrap();
    let theta = report.state.theta;
    // the stage-0 camera is approximate, so the hinge settles a hair past zero-width ranges
    let pose = pose_loss(&theta, &refine_limits(&limits, &theta, AnatomyOptions::default()));
    assert!(pose <= 1e-6, "pose loss {pose}");
    let mse = fitter.total_loss(&report.state, &obs, Stage::Mse);
    assert!(mse.data < 1e-2, "{mse:?}");
    assert!(joint_error(&report.mesh.joints, &mesh.joints).unwrap() < 1.0);
}

#[test]
fn clean_samples_are_recovered() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let fitter = Fitter::new(&model, &limits, FitConfig::default()).unwrap();
    let recs = common::samples(&model, 6, "clean", 0);
    let mut total = 0.0;
    for rec in &recs {
        let report = fitter.fit(&rec.observation).unwrap();
        total += joint_error(&report.mesh.joints, &rec.ground_truth.as_ref().unwrap().joints).unwrap();
    }
    assert!(total / recs.len() as f64 <= 5.0, "mean E_J {}", total / recs.len() as f64);
}

#[test]
fn corrupted_joints_get_large_sigma() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let fitter = Fitter::new(&model, &limits, FitConfig::default()).unwrap();
    for rec in common::samples(&model, 3, "corrupt:2:40", 5) {
        let report = fitter.fit(&rec.observation).unwrap();
        let sigma: Vec<f64> = report.state.log_sigma.iter().map(|s| s.exp()).collect();
        let med = median(&mut sigma.clone());
        for &j in &rec.ground_truth.as_ref().unwrap().corrupted {
            assert!(sigma[j] >= 3.0 * med, "{}: joint {j} sigma {} median {med}", rec.source_id, sigma[j]);
        }
    }
}

#[test]
fn too_few_visible_joints_are_rejected() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let fitter = Fitter::new(&model, &limits, FitConfig::default()).unwrap();
    for rec in common::samples(&model, 2, "occlude:18", 1) {
        match fitter.fit(&rec.observation) {
            Err(FitError::Observation(ObservationError::InsufficientJoints { visible, .. })) => assert_eq!(visible, 3),
            other => panic!("expected InsufficientJoints, got {other:?}"),
        }
    }
}

#[test]
fn fits_are_deterministic_across_job_counts() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let cfg = FitConfig { stage1_iters: 60, stage2_iters: 60, restarts: 3, ..Default::default() };
    let fitter = Fitter::new(&model, &limits, cfg).unwrap();
    let obs: Vec<_> = common::samples(&model, 3, "gaussian:2", 2).into_iter().map(|r| r.observation).collect();
    let encode = |items: Vec<handfit::fitter::BatchItem>| {
        items.into_iter().map(|(_, r)| serde_json::to_string(&r.unwrap()).unwrap()).collect::<Vec<_>>()
    };
    let a = encode(fit_batch(&fitter, &obs, 1));
    let mut reversed = obs.clone();
    reversed.reverse();
    let b = encode(fit_batch(&fitter, &reversed, 2));
    assert_eq!(a, b);
}

#[test]
fn trace_is_monotone_and_breakdowns_add_up() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let fitter = Fitter::new(&model, &limits, FitConfig::default()).unwrap();
    for rec in common::samples(&model, 2, "gaussian:2+corrupt:2:40", 3) {
        let report = fitter.fit(&rec.observation).unwrap();
        let mut best = [f64::INFINITY; 2];
        for p in &report.trace {
            let l = p.loss;
            assert!((l.data + l.pose + l.penetration + l.shape - l.total).abs() <= 1e-9 * l.total.abs().max(1.0));
            let k = p.stage as usize;
            assert!(l.total <= best[k], "stage {:?} iteration {}", p.stage, p.iteration);
            best[k] = l.total;
        }
        for s in &report.stages {
            assert!(s.accepted + s.rejected >= s.iterations || s.iterations == 0);
            assert!(s.last.total <= s.initial.total);
        }
    }
}

#[test]
fn backends_agree_on_random_states() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let fitter = Fitter::new(&model, &limits, FitConfig::default()).unwrap();
    let recs = common::samples(&model, 2, "gaussian:2", 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rec in &recs {
        let camera = rec.ground_truth.as_ref().unwrap().camera;
        for _ in 0..5 {
            let state = common::random_state(&mut rng, &limits, &camera);
            for stage in [Stage::Mse, Stage::Nll] {
                let err = fitter.gradient_check(&state, &rec.observation, stage).unwrap();
                assert!(err <= 1e-3, "{stage:?}: {err}");
            }
        }
    }
}

#[test]
fn finite_difference_mode_also_fits() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let cfg = FitConfig {
        gradient_mode: GradientMode::CentralFiniteDifference,
        stage1_iters: 40,
        stage2_iters: 20,
        restarts: 0,
        ..Default::default()
    };
    let fitter = Fitter::new(&model, &limits, cfg).unwrap();
    let rec = &common::samples(&model, 1, "clean", 6)[0];
    let report = fitter.fit(&rec.observation).unwrap();
    assert!(report.stages[0].last.total < report.stages[0].initial.total);
}

#[test]
fn priors_reduce_limit_violations() {
    let model = common::model();
    let limits = JointLimitTable::default();
    let recs = common::samples(&model, 4, "gaussian:2+corrupt:2:40", 7);
    let count = |cfg: FitConfig| {
        let fitter = Fitter::new(&model, &limits, cfg).unwrap();
        recs.iter()
            .map(|r| {
                let theta = fitter.fit(&r.observation).unwrap().state.theta;
                violations(&limits, &theta, AnatomyOptions::default()).iter().filter(|v| v.excess_deg > 1.0).count()
            })
            .sum::<usize>()
    };
    let free = count(FitConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() });
    let full = count(FitConfig::default());
    assert!(free > full, "without priors {free}, with priors {full}");
}
