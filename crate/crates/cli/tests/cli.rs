//! The `lrbandit` binary: outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn lrbandit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrbandit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_scalar_log(dir: &Path) {
    std::fs::write(dir.join("actions.csv"), "t,a_1\n1,1\n").unwrap();
    std::fs::write(dir.join("contexts.csv"), "t,l,x_1\n1,1,1\n").unwrap();
    std::fs::write(dir.join("rewards.csv"), "t,l,y\n1,1,1\n").unwrap();
}

const CONFIG: &str = "env = \"lowrank\"\nd_a = 3\nd_x = 4\nr = 1\ndiag = [1.0]\nsigma = 0.1\nL = 2\nt_init = 5\nT = 30\ntrials = 2\nseed = 1\n";

#[test]
fn schedule_prints_rounds() {
    let o = lrbandit(&["schedule", "--T", "31", "--exponent", "1.5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "1,2,5,8,11,14,18,22,27,31");
}

#[test]
fn estimate_scalar_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_scalar_log(dir.path());
    let o = lrbandit(&["estimate", "--dir", dir.path().to_str().unwrap(), "--lambda", "0.4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 0.6).abs() < 1e-9);
}

#[test]
fn estimate_then_interpret() {
    let dir = tempfile::tempdir().unwrap();
    write_scalar_log(dir.path());
    let theta = dir.path().join("theta.csv");
    let o = lrbandit(&["estimate", "--dir", dir.path().to_str().unwrap(), "--lambda", "0.4", "--out", theta.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("theta.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["d_a"], 1);
    let o = lrbandit(&["interpret", "--theta", theta.to_str().unwrap(), "--x-bar", "2", "--action-labels", "price"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["effective_rank"], 1);
    let scaled = &doc["factors"][0]["scaled_action_loadings"][0];
    assert_eq!(scaled["label"], "price");
    assert!((scaled["value"].as_f64().unwrap() - 1.2).abs() < 1e-9);
}

#[test]
fn missing_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG.replace("trials = 2\n", "")).unwrap();
    let o = lrbandit(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trials"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("{CONFIG}colour = 3\n")).unwrap();
    let o = lrbandit(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let o = lrbandit(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("trial,t,inst_regret,avg_regret,cum_reward,explored,degenerate,lambda_t,frob_err\n"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 30);
    let aggregate = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(aggregate.starts_with("t,mean_avg_regret,q05,q95,mean_gain\n"));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["master_seed"], 9);
    assert!(meta["prng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn bad_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_scalar_log(dir.path());
    std::fs::write(dir.path().join("rewards.csv"), "t,l,y\n1,1,abc\n").unwrap();
    let o = lrbandit(&["estimate", "--dir", dir.path().to_str().unwrap(), "--lambda", "0.4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn all_zero_rewards_are_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("actions.csv"), "t,a_1\n1,1\n2,1\n3,1\n").unwrap();
    std::fs::write(dir.path().join("contexts.csv"), "t,l,x_1\n1,1,1\n2,1,1\n3,1,1\n").unwrap();
    std::fs::write(dir.path().join("rewards.csv"), "t,l,y\n1,1,0\n2,1,0\n3,1,0\n").unwrap();
    let o = lrbandit(&["loo", "--dir", dir.path().to_str().unwrap(), "--lambda", "0.1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn usage_and_help_codes() {
    assert_eq!(lrbandit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lrbandit(&["schedule"]).status.code(), Some(1));
    assert_eq!(lrbandit(&["--help"]).status.code(), Some(0));
}

#[test]
fn replay_reports_gain() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = String::from("t,a_1,a_2\n");
    let mut c = String::from("t,l,x_1,x_2\n");
    let mut y = String::from("t,l,y\n");
    for t in 1..=30 {
        let (p, q) = ((t as f64 * 0.37).sin(), (t as f64 * 0.91).cos());
        let (x1, x2) = ((t as f64 * 1.3).cos(), 1.0);
        a.push_str(&format!("{t},{p},{q}\n"));
        c.push_str(&format!("{t},1,{x1},{x2}\n"));
        y.push_str(&format!("{t},1,{}\n", p * x1 + 0.5 * q * x2 + 0.01 * (t as f64).sin()));
    }
    std::fs::write(dir.path().join("actions.csv"), a).unwrap();
    std::fs::write(dir.path().join("contexts.csv"), c).unwrap();
    std::fs::write(dir.path().join("rewards.csv"), y).unwrap();
    let out = dir.path().join("out");
    let o = lrbandit(&[
        "replay", "--dir", dir.path().to_str().unwrap(), "--lambda", "0.01", "--t-init", "5", "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("final_gain="));
    let aggregate = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let last = aggregate.lines().last().unwrap();
    assert!(!last.ends_with(','), "gain column should be filled: {last}");
}
