use std::path::Path;
use std::process::{Command, Output};

use fedsea::{AdversarySpec, ExperimentConfig, LossSpec, ProjectionRadius, StepSizePolicy, Vector};

fn config(eta: f64, allow_unsafe: bool, horizon: usize) -> ExperimentConfig {
    ExperimentConfig {
        num_clients: 2,
        horizon,
        sync_period: 4,
        dimension: 2,
        step_size_policy: StepSizePolicy::Constant { eta, allow_unsafe },
        projection_radius: ProjectionRadius::default(),
        replicates: 4,
        seed: 3,
        loss_spec: LossSpec::MeanQuadratic,
        adversary_spec: AdversarySpec::StaticIid {
            mean: Vector::new(vec![0.5, 0.0]).unwrap(),
            variance: 1.0,
        },
        initial_point: None,
        initial_distance: None,
        sync_phase: 0,
    }
}

fn fedsea(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_fedsea"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(
        dir.path(),
        &config(0.02, false, 64).to_json().unwrap(),
        &["run"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["trace.csv", "result.json", "regret.svg"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn plots_can_be_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(
        dir.path(),
        &config(0.02, false, 32).to_json().unwrap(),
        &["run", "--plots", "off", "--replicates", "2", "--seed", "9"],
    );
    assert!(out.status.success());
    assert!(!dir.path().join("out/regret.svg").exists());
    let doc = fedsea::harness::ResultDocument::read(&dir.path().join("out/result.json")).unwrap();
    assert_eq!((doc.config.replicates, doc.config.seed), (2, 9));
}

#[test]
fn malformed_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(dir.path(), "{\"num_clients\": 0}", &["run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsafe_step_without_override_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(
        dir.path(),
        &config(0.5, false, 64).to_json().unwrap(),
        &["run"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(
        dir.path(),
        &config(3.0, true, 200).to_json().unwrap(),
        &["run"],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn audit_outside_lemma_preconditions_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(
        dir.path(),
        &config(0.5, true, 64).to_json().unwrap(),
        &["audit"],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn audit_passes_on_a_safe_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsea(
        dir.path(),
        &config(0.02, false, 64).to_json().unwrap(),
        &["audit", "--states", "3", "--budget", "20000"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("out/lemma2.json").exists());
}

#[test]
fn tau_study_and_speedup_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(0.02, false, 64).to_json().unwrap();
    let out = fedsea(dir.path(), &cfg, &["tau-study", "--periods", "1,2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("out/tau.csv").exists());
    let out = fedsea(dir.path(), &cfg, &["speedup", "--clients", "1,2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("out/speedup.csv").exists());
}
