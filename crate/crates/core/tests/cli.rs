use std::process::Command;

use mopac::cli::config::{Algorithm, Dynamics, ExperimentConfig};
use mopac::cli::trainer::{random_policy_returns, read_metrics, train, EvalStats, Trainer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mopac"))
}

#[test]
fn smoke_run_writes_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--preset", "smoke", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["epochs"], 2);
    assert_eq!(summary["env_steps"], 2000);

    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].env_steps, 2000);
    assert!(rows.iter().all(|r| r.is_finite()));
    for name in ["config.toml", "manifest.json", "timing.csv", "episodes.csv", "checkpoint.json"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }

    let eval = bin()
        .args(["evaluate", "--episodes", "3", "--checkpoint"])
        .arg(dir.path().join("checkpoint.json"))
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let stats: EvalStats = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(stats.returns.len(), 3);
}

#[test]
fn failures_print_a_structured_error_and_exit_nonzero() {
    let out = bin().args(["train", "--preset", "no_such_preset"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "configuration");
    assert!(err["message"].as_str().unwrap().contains("no_such_preset"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "total_epochs = 3\nnot_a_key = 1\n").unwrap();
    let out = bin().arg("train").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "configuration");
}

#[test]
fn bounds_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios.json");
    let report = dir.path().join("report.csv");
    let out = bin()
        .args(["bounds", "generate", "--count", "12", "--seed", "4", "--out"])
        .arg(&scenarios)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["bounds", "sweep", "--scenarios"])
        .arg(&scenarios)
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scenarios"], 12);
    assert_eq!(summary["satisfied"], 12);
    let lines = std::fs::read_to_string(&report).unwrap().lines().count();
    assert_eq!(lines, 13);
}

#[test]
fn untrained_policy_sits_in_the_random_band() {
    let cfg = ExperimentConfig {
        eval_episodes: 100,
        ..ExperimentConfig::preset("pendulum_fast").unwrap()
    };
    let stats = Trainer::new(cfg).unwrap().evaluate().unwrap();
    assert!((-1700.0..=-1000.0).contains(&stats.mean), "mean {}", stats.mean);
}

#[test]
fn planning_with_exact_dynamics_beats_random_actions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        algorithm: Algorithm::MbrlOnly,
        dynamics: Dynamics::Analytic,
        total_epochs: 5,
        eval_episodes: 3,
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::preset("pendulum_fast").unwrap()
    };
    let summary = train(cfg).unwrap();
    let random = EvalStats::from_returns(random_policy_returns("pendulum", 100, 0).unwrap());
    let best = summary
        .metrics
        .iter()
        .map(|r| r.eval_return_mean)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(best > random.mean, "best {best} vs random {}", random.mean);
}
