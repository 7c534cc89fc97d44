use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = [
    "--set",
    "simulate.players_per_game=15",
    "--set",
    "train.epochs=2",
    "--set",
    "analysis.k_range=[1,2,3]",
];

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salience-lab"))
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn all_writes_every_artifact_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(out, &["all"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let eval = std::fs::read_to_string(a.join("evaluation.csv")).unwrap();
    let rows: Vec<&str> = eval.lines().collect();
    assert_eq!(rows[0], "model,target,loss");
    assert_eq!(rows.len(), 13);
    for name in [
        "telemetry.csv",
        "telemetry.latent.csv",
        "embedding.csv",
        "embedding_2d.csv",
        "projection.json",
        "clusters.csv",
        "profiles.json",
        "elbow.json",
        "kmeans.json",
        "report/summary.json",
        "report/comparison.csv",
        "report/losses.svg",
        "report/embedding_by_game.svg",
    ] {
        let x = std::fs::read(a.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs between reruns");
    }
}

#[test]
fn stages_can_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    for args in [
        &["simulate"][..],
        &["featurize"],
        &["train", "--model", "enet"],
        &["train", "--model", "melchior"],
        &["embed"],
        &["cluster"],
    ] {
        let o = run(&out, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out.join("models/enet.json").exists());
    assert!(out.join("clusters.csv").exists());
}

#[test]
fn missing_inputs_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&dir.path().join("x"), &["featurize", "--input", "nowhere.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));

    let o = run(&dir.path().join("y"), &["evaluate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn invalid_overrides_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&dir.path().join("z"), &["--set", "split.ratio=2", "simulate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("split.ratio"));
    assert!(!dir.path().join("z/telemetry.csv").exists());
}

#[test]
fn default_config_round_trips() {
    let o = Command::new(env!("CARGO_BIN_EXE_salience-lab"))
        .arg("default-config")
        .output()
        .unwrap();
    assert!(o.status.success());
    let doc: salience_lab_cli::config::RunConfig = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc, salience_lab_cli::config::RunConfig::bundled());
}
