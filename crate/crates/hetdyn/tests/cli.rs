use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use hetdyn::dataset::read_series;
use hetdyn::manifest::RunManifest;
use hetdyn::report::{read_report, REPORT_FILE, REPORT_SCHEMA};

fn hdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdyn"))
        .args(args)
        .env_remove("HDYN_THREADS")
        .output()
        .expect("hdyn runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, system: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    let doc = serde_json::json!({ "version": 1, "system": system });
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

fn particles(n: usize, steps: usize) -> serde_json::Value {
    serde_json::json!({
        "kind": "attraction_repulsion",
        "n": n,
        "steps": steps,
        "seed": 5,
        "latents": { "types": { "params": [[1.6, 1.1, 1.2, 1.9], [1.2, 1.8, 1.7, 1.1], [1.9, 1.4, 1.0, 1.6]] } }
    })
}

/// Simulates `system` into `dir/name` and returns the dataset path.
fn simulate(dir: &Path, name: &str, system: serde_json::Value) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.json"), system);
    let out = dir.join(name);
    let o = hdyn(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("data.hdyn")
}

#[test]
fn simulate_writes_a_readable_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "ten", particles(10, 5));
    let series = read_series(&data).unwrap();
    assert_eq!(series[0].n(), 10);
    assert_eq!(series[0].len(), 5);
    let m = RunManifest::read(&dir.path().join("ten")).unwrap();
    assert!(m.verify().unwrap());
    assert_eq!(m.seed, 5);
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a", particles(50, 20));
    let b = simulate(dir.path(), "b", particles(50, 20));
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", particles(20, 4));
    let out = dir.path().join("o");
    let o = hdyn(&["simulate", "--config", s(&cfg), "--out", s(&out), "--seed", "9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_series(&out.join("data.hdyn")).unwrap()[0].config.seed, 9);
}

#[test]
fn invalid_kind_is_a_usage_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut sys = particles(10, 5);
    sys["kind"] = "plasma".into();
    let cfg = write_config(dir.path(), "bad.json", sys);
    let o = hdyn(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kind"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut sys = particles(10, 5);
    sys["stpes"] = 3.into();
    let cfg = write_config(dir.path(), "typo.json", sys);
    let o = hdyn(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stpes"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdyn(&["simulate", "--config", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(code(&o), 4);
}

#[test]
fn truth_rollout_reproduces_the_simulator() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(120, 40));
    let out = dir.path().join("roll");
    let o = hdyn(&["rollout", "--model", "truth", "--data", s(&data), "--steps", "39", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let rmse = summary["mean_rmse"].as_f64().unwrap();
    assert!(rmse < 1e-6, "rmse {rmse}");
    assert_eq!(summary["series"][0]["compared_frames"], 40);
    assert!(RunManifest::read(&out).unwrap().verify().unwrap());
}

#[test]
fn zero_step_rollout_is_the_initial_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(30, 10));
    let out = dir.path().join("roll");
    let o = hdyn(&["rollout", "--model", "truth", "--data", s(&data), "--steps", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rolled = read_series(&out.join("rollout.hdyn")).unwrap();
    let original = read_series(&data).unwrap();
    assert_eq!(rolled[0].frames.len(), 1);
    assert_eq!(rolled[0].frames[0], original[0].frames[0]);
}

#[test]
fn missing_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(10, 5));
    let model = dir.path().join("no_such_run");
    let o = hdyn(&["rollout", "--model", s(&model), "--data", s(&data), "--steps", "3", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_task_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(10, 5));
    let o = hdyn(&["analyze", "--model", "truth", "--data", s(&data), "--tasks", "cluster,umap", "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for t in ["cluster", "profiles", "fit", "metrics", "decompose"] {
        assert!(err.contains(t), "{err}");
    }
}

#[test]
fn analysis_report_matches_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(90, 30));
    let out = dir.path().join("a");
    let o = hdyn(&["analyze", "--model", "truth", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join(REPORT_FILE)).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    let parsed = read_report(&out.join(REPORT_FILE)).unwrap();
    assert_eq!(parsed.clusters.unwrap().accuracy, Some(1.0));
    for csv in ["profiles.csv", "embedding.csv", "recovered.csv"] {
        assert!(out.join(csv).is_file(), "{csv}");
    }
}

#[test]
fn one_epoch_smoke_run_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(100, 60));
    let run = dir.path().join("run");
    let start = Instant::now();
    let o = hdyn(&["--threads", "1", "train", "--data", s(&data), "--out", s(&run), "--epochs", "1"]);
    let took = start.elapsed();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(took < Duration::from_secs(60), "took {took:?}");
    for f in ["config.json", "metrics.csv", "checkpoint.ckpt", "manifest.json", "embeddings/epoch_0001.hdyn"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let r = hdyn(&["rollout", "--model", s(&run), "--data", s(&data), "--steps", "5", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(60, 30));
    let common = ["--hidden", "16", "--rotations", "1", "--batch-size", "4"];
    let whole = dir.path().join("whole");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&whole), "--epochs", "2"];
    args.extend(common);
    assert_eq!(code(&hdyn(&args)), 0);

    let split = dir.path().join("split");
    let mut first = vec!["train", "--data", s(&data), "--out", s(&split), "--epochs", "1"];
    first.extend(common);
    assert_eq!(code(&hdyn(&first)), 0);
    let mut second = vec!["train", "--data", s(&data), "--out", s(&split), "--epochs", "2", "--resume"];
    second.extend(common);
    let o = hdyn(&second);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let metrics = |d: &Path| fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&whole), metrics(&split));
    assert_eq!(
        fs::read(whole.join("checkpoint.ckpt")).unwrap(),
        fs::read(split.join("checkpoint.ckpt")).unwrap()
    );
}

#[test]
fn resume_refuses_changed_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d", particles(30, 10));
    let run = dir.path().join("run");
    let base = ["train", "--data", s(&data), "--out", s(&run), "--hidden", "8", "--rotations", "1"];
    let mut a = base.to_vec();
    a.extend(["--epochs", "1"]);
    assert_eq!(code(&hdyn(&a)), 0);
    let mut b = base.to_vec();
    b.extend(["--epochs", "2", "--lr", "0.5", "--resume"]);
    assert_eq!(code(&hdyn(&b)), 2);
}

#[test]
fn single_step_signaling_training_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let sys = serde_json::json!({
        "kind": "signaling",
        "n": 20,
        "steps": 10,
        "seed": 2,
        "latents": { "types": { "params": [[1.0, 1.0], [2.0, 0.5]] } }
    });
    let data = simulate(dir.path(), "sig", sys);
    let o = hdyn(&["train", "--data", s(&data), "--out", s(&dir.path().join("run")), "--multi-step", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("multi_step"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_hdyn"))
        .args(["simulate", "--config", "x.json", "--out", "y"])
        .env("HDYN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
