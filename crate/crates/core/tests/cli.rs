use std::path::Path;
use std::process::{Command, Output};

fn mousetrack(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mousetrack"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_PIPELINE: &str = r#"{
    "scene": {"n_epochs": 80},
    "training_datasets": 1,
    "train": {"epochs": 3, "hidden": 8}
}"#;

#[test]
fn simulate_solve_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = write(d, "scene.json", r#"{"n_epochs": 60, "deformation": false}"#);
    ok(&mousetrack(
        &[
            "simulate",
            "--config",
            &scene,
            "--seed",
            "3",
            "--out",
            "data.json",
        ],
        d,
    ));
    assert!(d.join("cameras.json").exists());

    ok(&mousetrack(
        &[
            "solve",
            "--data",
            "data.json",
            "--cameras",
            "cameras.json",
            "--out",
            "track.json",
        ],
        d,
    ));
    ok(&mousetrack(
        &[
            "evaluate",
            "--track",
            "track.json",
            "--data",
            "data.json",
            "--check",
        ],
        d,
    ));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["completeness_output"], 1.0);
    assert!(report["position_summary"]["rms"].as_f64().unwrap() < 3.0);

    let plots = d.join("plots");
    ok(&mousetrack(
        &[
            "plot",
            "--track",
            "track.json",
            "--data",
            "data.json",
            "--out-dir",
            plots.to_str().unwrap(),
        ],
        d,
    ));
    let svg = std::fs::read_to_string(plots.join("track.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let paths = doc.descendants().filter(|n| n.has_tag_name("path")).count();
    assert_eq!(paths, 2, "estimate and ground truth");
    assert!(plots.join("timeseries.csv").exists());
    for id in 0..3 {
        let csv = std::fs::read_to_string(plots.join(format!("reprojection_cam{id}.csv"))).unwrap();
        assert!(csv.lines().count() > 1);
    }
}

#[test]
fn simulate_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = write(d, "scene.json", r#"{"n_epochs": 20}"#);
    ok(&mousetrack(
        &[
            "simulate", "--config", &scene, "--seed", "9", "--out", "a.json",
        ],
        d,
    ));
    ok(&mousetrack(
        &[
            "simulate", "--config", &scene, "--seed", "9", "--out", "b.json",
        ],
        d,
    ));
    assert_eq!(
        std::fs::read(d.join("a.json")).unwrap(),
        std::fs::read(d.join("b.json")).unwrap()
    );
}

#[test]
fn pipeline_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "pipeline.json", SMALL_PIPELINE);
    for run in ["a", "b"] {
        ok(&mousetrack(
            &[
                "pipeline",
                "--config",
                &cfg,
                "--seed",
                "5",
                "--out-dir",
                run,
            ],
            d,
        ));
    }
    let a = std::fs::read(d.join("a/report.json")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(d.join("b/report.json")).unwrap());
}

#[test]
fn unsolved_epochs_fail_the_completeness_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = write(
        d,
        "scene.json",
        r#"{"n_epochs": 60, "occlusion": {"random_dropout_rate": 0.9}}"#,
    );
    ok(&mousetrack(
        &["simulate", "--config", &scene, "--out", "data.json"],
        d,
    ));
    // without smoothness, epochs with too few observations stay interpolated
    ok(&mousetrack(
        &[
            "solve",
            "--data",
            "data.json",
            "--cameras",
            "cameras.json",
            "--mode",
            "rigid",
            "--ws",
            "0",
        ],
        d,
    ));
    let out = mousetrack(
        &[
            "evaluate",
            "--track",
            "track.json",
            "--data",
            "data.json",
            "--check",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("completeness"));
}

#[test]
fn impossible_pipeline_threshold_exits_with_check_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "pipeline.json",
        r#"{"scene": {"n_epochs": 80}, "training_datasets": 1, "train": {"epochs": 3, "hidden": 8},
            "checks": {"max_position_rmse_mm": 0.0}}"#,
    );
    let out = mousetrack(&["pipeline", "--config", &cfg, "--check"], d);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn invalid_inputs_exit_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = write(d, "bad.json", r#"{"n_epochs": 60, "no_such_field": 1}"#);
    let out = mousetrack(&["simulate", "--config", &bad], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_field"));

    let scene = write(d, "scene.json", r#"{"n_epochs": 20}"#);
    ok(&mousetrack(&["simulate", "--config", &scene], d));
    let out = mousetrack(
        &[
            "solve",
            "--data",
            "data.json",
            "--cameras",
            "cameras.json",
            "--mode",
            "deformed",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));

    let out = mousetrack(
        &["evaluate", "--track", "missing.json", "--data", "data.json"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}
