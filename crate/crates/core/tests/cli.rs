//! End-to-end runs of the `lshctl` binary.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lshctl::config::ExperimentConfig;
use lshctl::persist::{ModelDocument, Stage};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_lshctl");

fn lshctl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SOURCE_DATE_EPOCH").output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Chaotic Lorenz setup with short learning runs, written into `dir`.
fn small_config(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> PathBuf {
    let mut cfg = common::fixture("lorenz_chaotic.toml");
    cfg.learning.reward_ticks = 3000;
    cfg.learning.q_ticks = 3000;
    cfg.evaluation.ticks = 1600;
    cfg.evaluation.seeds = vec![1, 2];
    edit(&mut cfg);
    let path = dir.join("small.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn calibrated_and_learned(dir: &Path, config: &Path) -> PathBuf {
    let model = dir.join("model.json");
    ok(&lshctl(&["calibrate", "--config", s(config), "--out", s(&model)]));
    ok(&lshctl(&["learn", "--config", s(config), "--model", s(&model)]));
    model
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn missing_config_exits_with_2() {
    let dir = TempDir::new().unwrap();
    let out = lshctl(&["calibrate", "--config", "/nonexistent/config.toml", "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn reference_calibration_has_three_unit_vectors_of_length_eight() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("cal.json");
    let cfg = common::fixture_path("lorenz_reference.toml");
    let stdout = ok(&lshctl(&["calibrate", "--config", s(&cfg), "--out", s(&model)]));
    assert!(stdout.contains("Nkey = "));
    assert!(stdout.contains("correlation dimension"));
    let doc = ModelDocument::load(&model).unwrap();
    assert_eq!(doc.stage, Stage::Calibrated);
    assert_eq!(doc.bank.nv(), 3);
    for f in doc.bank.functions() {
        assert_eq!(f.v().len(), 8);
        assert!((f.v().iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(f.q(), 45.0);
    }
    assert!((8..=25).contains(&doc.registry.len()));
    assert!(doc.transitions.is_empty());
}

#[test]
fn cylinder_fixture_runs_against_echo_plant() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("cyl.json");
    let cfg = common::fixture_path("cylinder_external.toml");
    let plant = format!("exec:{BIN} serve-echo");
    ok(&lshctl(&["calibrate", "--config", s(&cfg), "--plant", &plant, "--out", s(&model)]));
    let doc = ModelDocument::load(&model).unwrap();
    assert_eq!(doc.bank.nv(), 5);
    assert_eq!(doc.bank.ne(), 14);
    assert!(doc.bank.functions().iter().all(|f| f.q() == 50.0));
    assert_eq!(doc.actions.len(), 12);
    assert_eq!(doc.lambda, 23.0);
}

#[test]
fn learning_is_deterministic_and_sparse() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let a = calibrated_and_learned(dir.path(), &cfg);
    let first = std::fs::read(&a).unwrap();
    let again = dir.path().join("again");
    std::fs::create_dir(&again).unwrap();
    let b = calibrated_and_learned(&again, &cfg);
    assert_eq!(first, std::fs::read(&b).unwrap());

    let doc = ModelDocument::load(&a).unwrap();
    assert_eq!(doc.stage, Stage::Learned);
    let (nkey, na) = (doc.registry.len(), doc.actions.len());
    assert!(doc.transitions.len() <= nkey * na * nkey);
    assert_eq!(doc.transitions.iter().map(|t| t.count).sum::<u64>(), 6000);
    assert_eq!(doc.q_visits.iter().flatten().sum::<u64>(), 3000);
    assert_eq!(doc.provenance.reward_ticks, 3000);
}

#[test]
fn zero_q_effort_keeps_q_at_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |c| c.learning.q_ticks = 0);
    let doc = ModelDocument::load(&calibrated_and_learned(dir.path(), &cfg)).unwrap();
    assert!(doc.q.iter().flatten().all(|&q| q == 0.0));
    assert!(!doc.transitions.is_empty());
}

#[test]
fn unknown_format_version_exits_with_4() {
    let dir = TempDir::new().unwrap();
    let cfg = common::fixture_path("lorenz_reference.toml");
    let model = dir.path().join("cal.json");
    ok(&lshctl(&["calibrate", "--config", s(&cfg), "--out", s(&model)]));
    let text = std::fs::read_to_string(&model).unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
    std::fs::write(&model, text).unwrap();
    let out = lshctl(&["learn", "--config", s(&cfg), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn incompatible_config_exits_with_2() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("cal.json");
    ok(&lshctl(&["calibrate", "--config", s(&common::fixture_path("lorenz_reference.toml")), "--out", s(&model)]));
    let other = small_config(dir.path(), |c| c.embedding.ne = 9);
    let out = lshctl(&["learn", "--config", s(&other), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plant_failures_exit_with_3() {
    let dir = TempDir::new().unwrap();
    let cfg = common::fixture_path("cylinder_external.toml");
    let model = dir.path().join("m.json");
    for plant in ["exec:exit 0", "exec:echo NOPE", "tcp:127.0.0.1:1"] {
        let out = lshctl(&["calibrate", "--config", s(&cfg), "--plant", plant, "--out", s(&model)]);
        assert_eq!(out.status.code(), Some(3), "plant {plant}");
    }
}

#[test]
fn rollout_csvs() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let model = calibrated_and_learned(dir.path(), &cfg);

    let empty = dir.path().join("empty.csv");
    ok(&lshctl(&["rollout", "--config", s(&cfg), "--model", s(&model), "--out", s(&empty), "--ticks", "0"]));
    assert_eq!(
        std::fs::read_to_string(&empty).unwrap(),
        "tick,t,state,action_index,action,sensor,performance,reward,x1,x2,x3\n"
    );

    let null = dir.path().join("null.csv");
    ok(&lshctl(&["rollout", "--config", s(&cfg), "--model", s(&model), "--out", s(&null), "--ticks", "900", "--policy", "null"]));
    let (header, rows) = csv_rows(&null);
    let action = header.iter().position(|h| h == "action").unwrap();
    assert_eq!(rows.len(), 900);
    assert!(rows.iter().all(|r| r[action].parse::<f64>().unwrap() == 0.0));
    assert!(!std::fs::read_to_string(&null).unwrap().contains('\r'));

    let constant = dir.path().join("constant.csv");
    let trace = dir.path().join("trace.csv");
    ok(&lshctl(&[
        "rollout", "--config", s(&cfg), "--model", s(&model), "--out", s(&constant), "--ticks", "900",
        "--policy", "constant:-6", "--trace", s(&trace),
    ]));
    let (header, rows) = csv_rows(&constant);
    let (t, action) = (header.iter().position(|h| h == "t").unwrap(), header.iter().position(|h| h == "action").unwrap());
    for r in &rows {
        let expect = if r[t].parse::<f64>().unwrap() >= 15.0 { -6.0 } else { 0.0 };
        assert_eq!(r[action].parse::<f64>().unwrap(), expect);
    }
    // Warm-up ticks appear in the raw trace but not in the log.
    assert_eq!(csv_rows(&trace).1.len(), 908);

    let bad = lshctl(&["rollout", "--config", s(&cfg), "--model", s(&model), "--out", s(&constant), "--policy", "best"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn evaluation_indicator_is_zero_for_null_and_one_for_oracle() {
    let dir = TempDir::new().unwrap();
    // A small penalty makes a non-zero constant action the best time-invariant choice.
    let cfg = small_config(dir.path(), |c| c.learning.lambda = 0.001);
    let model = calibrated_and_learned(dir.path(), &cfg);
    let out = dir.path().join("eval");
    let stdout = ok(&lshctl(&["evaluate", "--config", s(&cfg), "--model", s(&model), "--out", s(&out)]));
    assert!(stdout.contains("oracle action = "));
    assert!(!stdout.contains("oracle action = 0 "));

    let (header, rows) = csv_rows(&out.join("summary.csv"));
    assert_eq!(header, ["policy", "seed", "J", "eta", "mean_V"]);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        match r[0].as_str() {
            "null" => assert_eq!(r[3].parse::<f64>().unwrap(), 0.0),
            "oracle" => assert_eq!(r[3].parse::<f64>().unwrap(), 1.0),
            "learned" => assert!(r[3].parse::<f64>().unwrap().is_finite()),
            other => panic!("unexpected policy {other}"),
        }
    }
    for policy in ["null", "oracle", "learned"] {
        for seed in [1, 2] {
            assert_eq!(csv_rows(&out.join(format!("{policy}_seed{seed}.csv"))).1.len(), 1600);
        }
    }
}
