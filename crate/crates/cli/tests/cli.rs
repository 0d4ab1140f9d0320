use std::path::Path;
use std::process::Command;

use handfit::dataset::SampleRecord;
use handfit::records::{read_records, ReportRecord, DATASET_FORMAT, REPORTS_FORMAT};
use handfit::{synth_test_model, Intrinsics};

fn handfit(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_handfit"));
    c.current_dir(dir).env("HANDFIT_LOG", "warn");
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("HANDFIT_") && k != "HANDFIT_LOG") {
        c.env_remove(k);
    }
    c
}

fn status(c: &mut Command) -> i32 {
    c.output().unwrap().status.code().unwrap()
}

fn dataset(path: &Path) -> Vec<SampleRecord> {
    read_records(std::io::BufReader::new(std::fs::File::open(path).unwrap()), DATASET_FORMAT).unwrap()
}

#[test]
fn synth_records_are_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(handfit(dir.path()).args(["--seed", "0", "synth", "--n", "10", "-o", "d.jsonl"])), 0);
    let recs = dataset(&dir.path().join("d.jsonl"));
    assert_eq!(recs.len(), 10);
    let model = synth_test_model(0);
    for r in &recs {
        r.check_consistency(&model, &Intrinsics::default()).unwrap();
    }
}

#[test]
fn gaussian_noise_has_requested_spread() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(handfit(dir.path()).args(["synth", "--n", "60", "--noise", "gaussian:2", "-o", "d.jsonl"])), 0);
    let mut sq = Vec::new();
    for r in dataset(&dir.path().join("d.jsonl")) {
        let gt = r.ground_truth.unwrap();
        for (o, c) in r.observation.positions.iter().zip(&gt.landmarks) {
            sq.push(o[0] - c[0]);
            sq.push(o[1] - c[1]);
        }
    }
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let std = (sq.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 2.0).abs() <= 0.2, "std {std}");
}

#[test]
fn round_trip_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(handfit(dir.path()).args(["synth", "--n", "3", "-o", "d.jsonl"])), 0);
    let fit = handfit(dir.path())
        .env("HANDFIT_STAGE1_ITERS", "150")
        .args(["fit", "-d", "d.jsonl", "-o", "r.jsonl", "--stage2-iters", "120", "--ply-dir", "ply"])
        .output()
        .unwrap();
    assert_eq!(fit.status.code(), Some(0), "{}", String::from_utf8_lossy(&fit.stderr));
    let reports: Vec<ReportRecord> =
        read_records(std::io::BufReader::new(std::fs::File::open(dir.path().join("r.jsonl")).unwrap()), REPORTS_FORMAT)
            .unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        let rep = r.report.as_ref().unwrap();
        assert_eq!(rep.config.stage1_iters, 150);
        assert_eq!(rep.config.stage2_iters, 120);
        assert!(rep.wall_time_s.is_none());
        let ply = std::fs::read_to_string(dir.path().join("ply").join(format!("{}.ply", r.source_id))).unwrap();
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
    }
    let eval = handfit(dir.path()).args(["eval", "-r", "r.jsonl", "-d", "d.jsonl", "--json", "s.json"]).output().unwrap();
    assert_eq!(eval.status.code(), Some(0));
    let stdout = String::from_utf8(eval.stdout).unwrap();
    let summary: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(summary["n_samples"], 3);
    assert!(summary["e_j"].as_f64().unwrap() < 10.0);
    assert!(stdout.contains("E_J (mm)"));
    assert!(dir.path().join("s.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(status(handfit(d).args(["fit", "--no-such-flag"])), 1);
    assert_eq!(status(handfit(d).args(["fit", "-d", "absent.jsonl", "-o", "r.jsonl"])), 2);
    assert_eq!(status(handfit(d).args(["synth", "--n", "2", "--noise", "nonsense", "-o", "x.jsonl"])), 1);
    assert_eq!(status(handfit(d).args(["synth", "--n", "2", "--noise", "occlude:18", "-o", "o.jsonl"])), 0);
    assert_eq!(status(handfit(d).args(["fit", "-d", "o.jsonl", "-o", "r.jsonl"])), 2);
    let reports = std::fs::read_to_string(d.join("r.jsonl")).unwrap();
    assert_eq!(reports.matches("\"kind\":\"data\"").count(), 2);
    assert_eq!(status(handfit(d).args(["fit", "-d", "o.jsonl", "-o", "r.jsonl", "--step-size", "0"])), 1);
    std::fs::write(d.join("cfg.toml"), "lambda1 = 1.0\nbogus = 2\n").unwrap();
    assert_eq!(status(handfit(d).args(["--config", "cfg.toml", "fit", "-d", "o.jsonl", "-o", "r.jsonl"])), 1);
}

#[test]
fn readers_reject_unknown_major_versions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(status(handfit(d).args(["synth", "--n", "1", "-o", "d.jsonl"])), 0);
    let text = std::fs::read_to_string(d.join("d.jsonl")).unwrap();
    std::fs::write(d.join("v2.jsonl"), text.replacen("\"version\":\"1.0\"", "\"version\":\"2.0\"", 1)).unwrap();
    let out = handfit(d).args(["fit", "-d", "v2.jsonl", "-o", "r.jsonl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported handfit-dataset version 2.0"));
    // a dataset is not a reports file
    assert_eq!(status(handfit(d).args(["eval", "-r", "d.jsonl", "-d", "d.jsonl"])), 2);
}

#[test]
fn validate_pose_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rest = vec![[0.0; 3]; 15];
    let mut bad = rest.clone();
    bad[4] = [120.0, 0.0, 40.0];
    let lines = [
        serde_json::json!({"format": "handfit-theta", "version": "1.0"}),
        serde_json::json!({"id": "rest", "theta_deg": rest}),
        serde_json::json!({"id": "bad", "theta_deg": bad}),
    ];
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("t.jsonl"), text).unwrap();
    let out = handfit(d).args(["validate-pose", "--theta", "t.jsonl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let audits: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(audits[0]["valid"], true);
    assert_eq!(audits[1]["valid"], false);
    let axes: Vec<&str> = audits[1]["violations"].as_array().unwrap().iter().map(|v| v["axis"].as_str().unwrap()).collect();
    assert!(axes.contains(&"bend") && axes.contains(&"twist"));
}

#[test]
fn exported_model_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(status(handfit(d).args(["export-model", "-o", "m.json"])), 0);
    assert_eq!(status(handfit(d).args(["--model", "m.json", "synth", "--n", "2", "-o", "a.jsonl"])), 0);
    assert_eq!(status(handfit(d).args(["synth", "--n", "2", "-o", "b.jsonl"])), 0);
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
}
