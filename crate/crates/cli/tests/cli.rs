use std::path::Path;
use std::process::{Command, Output};

use parpow::harness::{ExperimentConfig, PolicySpec, Preset};
use parpow::protocol::ProtocolKind;

fn parpow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parpow"))
        .args(args)
        .current_dir(dir)
        .env_remove("PARPOW_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut config = ExperimentConfig {
        protocols: vec![ProtocolKind::Parallel],
        k: 3,
        alphas: vec![0.3],
        gammas: vec![0.5],
        policies: vec![PolicySpec::Honest, PolicySpec::Sm1Inclusive],
        n_rollouts: 4,
        horizon: 200,
        ..ExperimentConfig::preset(Preset::PaperEval)
    };
    config.training.episodes = 20;
    config.training.eval_episodes = 4;
    config.fairness.protocols = vec![ProtocolKind::Sequential];
    config.fairness.n_rollouts = 3;
    config.fairness.puzzles = 300;
    edit(&mut config);
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn sweep_writes_csv_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let config = write_config(dir.path(), |c| c.event_logs = Some(logs.clone()));
    let o = parpow(&["sweep", "--config", &config, "--out", "out/sweep.csv", "--workers", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(csv.starts_with("protocol,scheme,k,alpha,gamma,policy,mean,std,ci95,n_rollouts,seed\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(!csv.contains('\r'));
    let log = logs.join("parallel_a0.3_g0.5_sm1-inclusive.tsv");
    let o = parpow(&["replay", log.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 invalid"));
    let o = parpow(&["replay", log.to_str().unwrap(), "--dot"], dir.path());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("digraph"));
}

#[test]
fn seed_flag_changes_output_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |_| ());
    let run = |seed: &str, out: &str| {
        let o = parpow(&["sweep", "--config", &config, "--seed", seed, "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("7", "a.csv");
    assert_eq!(a, run("7", "b.csv"));
    assert_ne!(a, run("8", "c.csv"));
}

#[test]
fn invalid_configuration_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |c| c.alphas.clear());
    let o = parpow(&["sweep", "--config", &config, "--out", "x.csv"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
    assert!(!dir.path().join("x.csv").exists());
    let o = parpow(&["sweep", "--config", &config, "--preset", "deployment"], dir.path());
    assert!(!o.status.success());
    let o = parpow(&["sweep", "--preset", "mainnet"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn train_then_evaluate_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |_| ());
    let o = parpow(
        &["train", "--config", &config, "--protocol", "tree", "--alpha", "0.35", "--gamma", "0.5", "--episodes", "30", "--out", "t.qtable"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("t.qtable")).unwrap();
    assert!(table.starts_with("# k=3"));
    let o = parpow(
        &["evaluate", "--config", &config, "--protocol", "tree", "--alpha", "0.35", "--gamma", "0.5", "--policy", "qtable:t.qtable", "--rollouts", "5"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("protocol,scheme,k,alpha,gamma,policy,mean,std,ci95,n_rollouts,seed"));
    assert!(lines.next().unwrap().starts_with("tree,tree-discount,3,0.35,0.5,qtable:t.qtable,"));
    // a table trained for another k is rejected
    let o = parpow(
        &["evaluate", "--protocol", "tree", "--alpha", "0.35", "--gamma", "0.5", "--policy", "qtable:t.qtable"],
        dir.path(),
    );
    assert!(!o.status.success());
}

#[test]
fn fairness_honors_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |_| ());
    let target = dir.path().join("results");
    let o = Command::new(env!("CARGO_BIN_EXE_parpow"))
        .args(["fairness", "--config", &config, "--out", "fair.csv"])
        .current_dir(dir.path())
        .env("PARPOW_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(target.join("fair.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn corrupt_log_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.tsv");
    std::fs::write(&log, "# protocol=sequential k=1 scheme=constant attacker=-\n0.1\tblock\t0\t1\t0\n0.2\tblock\t0").unwrap();
    let o = parpow(&["replay", log.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}
