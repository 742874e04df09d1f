use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mono-elasticity"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = run(args, cwd);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_without_out_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["synth", "--items", "3"], dir.path())), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["synth", "--out", "d", "--colour", "red"], dir.path())), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = run(&["synth", "--config", "c.json", "--out", "d"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn config_from_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--items", "3", "--months", "6", "--out", "d"], dir.path());
    let out = run(
        &["train", "--config", "d/resolved_config.json", "--out", "m"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        &["synth", "--items", "6", "--months", "10", "--seed", "7", "--out", "a"],
        p,
    );
    ok(
        &["synth", "--items", "6", "--months", "10", "--seed", "7", "--out", "b"],
        p,
    );
    ok(
        &["synth", "--items", "6", "--months", "10", "--seed", "8", "--out", "c"],
        p,
    );
    let read = |d: &str, f: &str| fs::read(p.join(d).join(f)).unwrap();
    assert_eq!(read("a", "transactions.csv"), read("b", "transactions.csv"));
    assert_eq!(read("a", "truth.csv"), read("b", "truth.csv"));
    assert_ne!(read("a", "transactions.csv"), read("c", "transactions.csv"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("c.json"), r#"{"world": {"items": 9, "months": 5}}"#).unwrap();
    ok(&["synth", "--config", "c.json", "--items", "4", "--out", "d"], p);
    let resolved: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("d/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["world"]["items"], 4);
    assert_eq!(resolved["world"]["months"], 5);
    assert_eq!(resolved["command"], "synth");
}

#[test]
fn full_pipeline_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        &[
            "synth", "--items", "12", "--months", "15", "--seed", "2", "--out", "raw",
        ],
        p,
    );
    ok(
        &[
            "build",
            "--input",
            "raw/transactions.csv",
            "--out",
            "data",
            "--seed",
            "2",
        ],
        p,
    );
    ok(
        &[
            "train", "--data", "data", "--out", "model", "--epochs", "2", "--seed", "2",
        ],
        p,
    );
    ok(
        &[
            "evaluate",
            "--model",
            "model/model.mdnm",
            "--data",
            "data",
            "--out",
            "eval",
        ],
        p,
    );
    ok(
        &[
            "elasticity",
            "--model",
            "model/model.mdnm",
            "--input",
            "raw/transactions.csv",
            "--truth",
            "raw/truth.csv",
            "--delta",
            "-0.05",
            "--out",
            "el",
        ],
        p,
    );
    for f in [
        "raw/transactions.csv",
        "raw/truth.csv",
        "data/train.csv",
        "data/validation.csv",
        "data/out_of_time.csv",
        "data/manifest.json",
        "model/model.mdnm",
        "model/train_report.json",
        "model/loss.csv",
        "eval/metrics.json",
        "el/elasticity.csv",
        "el/elasticity_summary.json",
    ] {
        assert!(p.join(f).is_file(), "missing {f}");
    }
    for d in ["raw", "data", "model", "eval", "el"] {
        assert!(
            p.join(d).join("resolved_config.json").is_file(),
            "no resolved config in {d}"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("el/elasticity_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["items"], 12);
    assert_eq!(summary["positive"], 0);
    let loss = fs::read_to_string(p.join("model/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    // Re-running from the resolved config reproduces the model byte for byte.
    ok(
        &["train", "--config", "model/resolved_config.json", "--out", "again"],
        p,
    );
    assert_eq!(
        fs::read(p.join("model/model.mdnm")).unwrap(),
        fs::read(p.join("again/model.mdnm")).unwrap()
    );
    assert_eq!(
        fs::read(p.join("model/train_report.json")).unwrap(),
        fs::read(p.join("again/train_report.json")).unwrap()
    );
}

#[test]
fn evaluate_with_mismatched_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["synth", "--items", "6", "--months", "14", "--out", "raw"], p);
    ok(&["build", "--input", "raw/transactions.csv", "--out", "data"], p);
    ok(&["train", "--data", "data", "--out", "model", "--epochs", "1"], p);
    // No November or December, so no holiday event in the vocabulary.
    ok(&["synth", "--items", "6", "--months", "5", "--out", "raw2"], p);
    ok(
        &[
            "build",
            "--input",
            "raw2/transactions.csv",
            "--out",
            "data2",
            "--ots-months",
            "1",
        ],
        p,
    );
    let out = run(
        &[
            "evaluate",
            "--model",
            "model/model.mdnm",
            "--data",
            "data2",
            "--out",
            "e",
        ],
        p,
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}

#[test]
fn corrupted_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["synth", "--items", "4", "--months", "8", "--out", "raw"], p);
    fs::write(p.join("bad.mdnm"), b"not a model").unwrap();
    let out = run(
        &[
            "elasticity",
            "--model",
            "bad.mdnm",
            "--input",
            "raw/transactions.csv",
            "--out",
            "el",
        ],
        p,
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn gradcheck_on_default_architecture_passes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gradcheck", "--out", "g"], dir.path());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("g/gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-5);
}
