use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn arccap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arccap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_vec(v).unwrap()).unwrap();
}

fn annotations() -> Value {
    json!({
        "images": [{"id": 1, "file_name": "1.jpg"}, {"id": 2, "file_name": "2.jpg"}],
        "annotations": [
            {"id": 10, "image_id": 1, "caption": "A dog runs on the grass."},
            {"id": 11, "image_id": 2, "caption": "Two cats sleep in a bed."}
        ]
    })
}

#[test]
fn unknown_command_is_a_usage_error() {
    assert_eq!(arccap(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(arccap(&[]).status.code(), Some(1));
    assert_eq!(arccap(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(arccap(&["decode", "--beam", "0", "--out", "x"]).status.code(), Some(1));
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "sede = 3\n").unwrap();
    assert_eq!(
        arccap(&["selfcheck", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn eval_of_references_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.json");
    let preds = dir.path().join("predictions.same.json");
    write(&ann, &annotations());
    write(
        &preds,
        &json!([
            {"image_id": 1, "caption": "a dog runs on the grass"},
            {"image_id": 2, "caption": "two cats sleep in a bed"}
        ]),
    );
    let out = arccap(&[
        "eval",
        "--annotations",
        ann.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let json_part = stdout.split("\n\n").next().unwrap();
    let doc: Value = serde_json::from_str(json_part).unwrap();
    let report = &doc["same"];
    for key in ["B1", "B2", "B3", "B4", "R"] {
        assert!((report[key].as_f64().unwrap() - 1.0).abs() < 1e-9, "{key}");
    }
    assert!((report["C"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!(report["M"].is_null() && report["S"].is_null());
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.json");
    let regions = dir.path().join("regions.json");
    write(&ann, &annotations());
    // region for an image that is not in the annotations
    write(&regions, &json!({"9": [{"box": [0, 0, 1, 1], "features": [1.0]}]}));
    let work = dir.path().join("work");
    let args = [
        "ingest",
        "--annotations",
        ann.to_str().unwrap(),
        "--regions",
        regions.to_str().unwrap(),
        "--out",
        work.to_str().unwrap(),
    ];
    assert_eq!(arccap(&args).status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    let out = arccap(&[
        "eval",
        "--annotations",
        missing.to_str().unwrap(),
        "--predictions",
        ann.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&ann, "{not json").unwrap();
    let out = arccap(&[
        "eval",
        "--annotations",
        ann.to_str().unwrap(),
        "--predictions",
        ann.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let out = arccap(&["selfcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{stdout}");
}
