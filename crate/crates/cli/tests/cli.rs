use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn elicit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elicit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = elicit(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Separating population with a task split plus a fitted two-type model.
fn fixture(dir: &Path) {
    ok(dir, &["--seed", "3", "generate", "--preset", "separating", "--output", "ds.json"]);
    ok(dir, &["--seed", "3", "fit", "--dataset", "ds.json", "--k", "2", "--output", "m.json"]);
}

#[test]
fn generate_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "5", "generate", "--preset", "reference", "--output", "a.json"]);
    ok(d, &["--seed", "5", "generate", "--preset", "reference", "--output", "b.json"]);
    ok(d, &["--seed", "6", "generate", "--preset", "reference", "--output", "c.json"]);
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    assert_ne!(a, fs::read(d.join("c.json")).unwrap());
    let manifest = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().contains("a.") && p != &d.join("a.json"))
        .expect("manifest next to the dataset");
    assert!(fs::read_to_string(manifest).unwrap().contains("\"seed\": 5"));
    let ds = json(&d.join("a.json"));
    assert_eq!(ds["split"]["test"].as_array().unwrap().len(), 10);
}

#[test]
fn zero_types_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("spec.json"),
        r#"{"K": 0, "C": 4, "num_tasks": 2, "users_per_task": 3, "seed": 1}"#,
    )
    .unwrap();
    let o = elicit(dir.path(), &["generate", "--spec", "spec.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("K must be ≥ 1"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_and_bad_names_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = elicit(d, &["fit", "--dataset", "nowhere.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.json"));

    fixture(d);
    let o = elicit(d, &["elicit", "--model-file", "m.json", "--dataset", "ds.json", "--strategy", "smart"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["random", "uncertainty", "uncertainty-soft", "infogain", "infogain-soft", "static"] {
        assert!(err.contains(name), "{err}");
    }

    let o = elicit(d, &["fit", "--dataset", "ds.json", "--model", "forest"]);
    assert_eq!(o.status.code(), Some(2));
    let o = elicit(d, &["ablate", "--arms", "full-infogain,best-arm"]);
    assert_eq!(o.status.code(), Some(2));
    let o = elicit(d, &["--bogus-flag", "generate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_model_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    fs::write(d.join("broken.json"), "{\"schema_version\": 1").unwrap();
    let o = elicit(d, &["elicit", "--model-file", "broken.json", "--dataset", "ds.json"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn fit_manifest_records_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    ok(d, &["--seed", "4", "fit", "--dataset", "ds.json", "--model", "blr", "--tau", "2", "--sigma", "0.3", "--masks", "4", "--output", "b.json"]);
    let m = json(&d.join("b.json"));
    let h = &m["manifest"]["hyperparameters"];
    assert_eq!(h["tau"], 2.0);
    assert_eq!(h["sigma"], 0.3);
    assert_eq!(h["masks_per_profile"], 4);
    assert_eq!(m["manifest"]["seed"], 4);
    assert_eq!(m["manifest"]["dataset_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(json(&d.join("m.json"))["manifest"]["hyperparameters"]["K"], 2);
}

#[test]
fn elicit_writes_records_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let out = ok(d, &["--seed", "9", "--out", "runs", "elicit", "--model-file", "m.json", "--dataset", "ds.json", "--budget", "3", "--trials", "4"]);
    assert!(out.contains("over 4 trials"), "{out}");
    let runs = run_dirs(&d.join("runs"));
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run.file_name().unwrap().to_string_lossy().ends_with("-seed9"));
    let report = json(&run.join("report.json"));
    assert_eq!(report["trial_pct_of_oracle"].as_array().unwrap().len(), 4);
    assert_eq!(report["budget"], 3);
    let lines = fs::read_to_string(run.join("sessions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 100);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["history"].as_array().unwrap().len(), 3);
    assert!(fs::read_to_string(run.join("timings.csv")).unwrap().lines().count() > 100);
}

#[test]
fn elicit_is_reproducible_across_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let mut files = Vec::new();
    for (parallel, out) in [("1", "a"), ("6", "b")] {
        ok(d, &["--seed", "2", "--parallel", parallel, "--out", out, "elicit", "--model-file", "m.json", "--dataset", "ds.json", "--strategy", "infogain-soft", "--trials", "2"]);
        files.push(fs::read(run_dirs(&d.join(out))[0].join("sessions.jsonl")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn interactive_session_reads_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let mut child = Command::new(env!("CARGO_BIN_EXE_elicit"))
        .current_dir(d)
        .args(["--out", "runs", "elicit", "--model-file", "m.json", "--dataset", "ds.json", "--budget", "2", "--interactive"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"5\nnone\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(run_dirs(&d.join("runs"))[0].join("interactive.jsonl")).unwrap();
    let rec: Value = serde_json::from_str(text.trim()).unwrap();
    let answers: Vec<&Value> = rec["history"].as_array().unwrap().iter().map(|o| &o["answer"]).collect();
    assert_eq!(answers.len(), 2);
    assert_eq!(answers[0], 5);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    fs::write(d.join("cfg.json"), r#"{"budget": 2, "trials": 3, "seed": 11, "out": "cfgruns"}"#).unwrap();
    let out = ok(d, &["--config", "cfg.json", "elicit", "--model-file", "m.json", "--dataset", "ds.json", "--budget", "4"]);
    assert!(out.contains("T=4") && out.contains("over 3 trials"), "{out}");
    let run = &run_dirs(&d.join("cfgruns"))[0];
    assert!(run.to_string_lossy().ends_with("-seed11"));

    fs::write(d.join("bad.json"), r#"{"budjet": 2}"#).unwrap();
    let o = elicit(d, &["--config", "bad.json", "elicit", "--model-file", "m.json", "--dataset", "ds.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("budjet"));
}

#[test]
fn run_directories_never_collide() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for _ in 0..3 {
        ok(d, &["--seed", "1", "--out", "o", "generate", "--preset", "separating"]);
    }
    let runs = run_dirs(&d.join("o"));
    assert_eq!(runs.len(), 3);
    for r in &runs {
        assert!(r.join("dataset.json").exists());
    }
}

#[test]
fn ablate_prints_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["--seed", "7", "--out", "o", "ablate", "--trials", "2", "--max-budget", "6"]);
    for arm in ["full-infogain", "full-random", "nocorr-infogain", "population-average"] {
        assert!(out.contains(arm), "{out}");
    }
    assert!(out.contains("full-random at T=6"));
    let csv = fs::read_to_string(run_dirs(&d.join("o"))[0].join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 7);
}

#[test]
fn adaptivity_static_row_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["--seed", "7", "--out", "o", "adaptivity", "--strategies", "static,infogain"]);
    let static_line = out.lines().find(|l| l.starts_with("static")).unwrap();
    assert!(static_line.contains("0.0000"), "{out}");
    let csv = fs::read_to_string(run_dirs(&d.join("o"))[0].join("adaptivity.csv")).unwrap();
    assert!(csv.contains("static,all,0,2000,0.000000"), "{csv}");
    assert!(csv.contains("infogain,all,525,2000,0.262500"), "{csv}");

    let o = elicit(d, &["adaptivity", "--budget", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn complexity_demo_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["--seed", "7", "--out", "o", "complexity-demo", "--budgets", "1,2", "--learner-seeds", "1"]);
    assert!(out.contains("T=1") && out.contains("T=2"), "{out}");
    let run = &run_dirs(&d.join("o"))[0];
    let curves = fs::read_to_string(run.join("learning_curves.csv")).unwrap();
    assert!(curves.starts_with("budget,episode,cumulative_queries"));
    assert!(curves.lines().any(|l| l.starts_with("2,")));
    assert_eq!(fs::read_to_string(run.join("complexity.csv")).unwrap().lines().count(), 3);
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--help"]);
    for cmd in ["generate", "fit", "elicit", "ablate", "adaptivity", "complexity-demo", "reference-experiment"] {
        assert!(out.contains(cmd), "{out}");
    }
    assert!(out.contains("precedence"));
}
