use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fixtures", &format!("{name}.toml")].iter().collect();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_layerstack")).args(args).output().expect("binary runs");
    let text = String::from_utf8(out.stdout).unwrap();
    let json = serde_json::from_str(text.trim()).unwrap_or(Value::Null);
    (out.status.code().unwrap_or(-1), json)
}

#[test]
fn validate_nested_passes() {
    let (code, j) = run(&["validate", &fixture("nested-3")]);
    assert_eq!(code, 0);
    assert_eq!(j["status"], "pass");
    assert_eq!(j["members"][2]["parent"], "shell");
    assert_eq!(j["partition"]["gaps"], 0);
    assert_eq!(j["seed"], 24301);
}

#[test]
fn validate_rejects_bad_scenes() {
    let (code, j) = run(&["validate", &fixture("partial-overlap")]);
    assert_eq!(code, 2);
    assert_eq!(j["kind"], "TrichotomyViolation");
    assert_eq!(j["detail"]["witnesses"].as_array().unwrap().len(), 3);
    let (code, j) = run(&["validate", &fixture("duplicate-id")]);
    assert_eq!(code, 1);
    assert!(j["message"].as_str().unwrap().contains("duplicate"));
    let (code, _) = run(&["validate", "/nonexistent/scene.toml"]);
    assert_eq!(code, 1);
}

#[test]
fn stack_auto_radius_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, j) = run(&["stack", &fixture("nested-3"), "--out", "json,csv,svg", "--output-dir", d]);
    assert_eq!(code, 0, "{j}");
    assert_eq!((j["chain"]["l"].as_u64(), j["chain"]["m"].as_u64()), (Some(2), Some(0)));
    assert_eq!(j["radius_auto"], true);
    assert_eq!(j["graphs"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("stack.json").exists());
    assert!(dir.path().join("graph_1.csv").exists());
    let svg = std::fs::read_to_string(dir.path().join("stack.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polygon"));
    let csv = std::fs::read_to_string(dir.path().join("graph_2.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("y2,phi,dphi_dy2"));
    assert_eq!(csv.lines().count(), 130);

    let stack = dir.path().join("stack.json");
    let (code, j) = run(&["verify", &fixture("nested-3"), "--estimates", stack.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(j["ordered"], true);
}

#[test]
fn stack_boundary_records_zero_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let (code, j) = run(&["stack", &fixture("boundary-half-space"), "--boundary", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(j["boundary"], true);
    assert_eq!(j["graphs"][0]["values"][64].as_f64().unwrap().abs(), 0.0);
    assert_eq!(j["chain"]["m"], 0);
}

#[test]
fn ladder_refusal_and_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, j) = run(&["stack", &fixture("nested-2"), "--radius", "1e-3", "--output-dir", d]);
    assert_eq!(code, 3);
    assert_eq!(j["kind"], "LadderRefusal");
    let (code, j) = run(&["stack", &fixture("twin-nested"), "--force", "--output-dir", d]);
    assert_eq!(code, 3);
    assert_eq!(j["kind"], "UnionNotInS");
}

#[test]
fn reifenberg_examples() {
    assert_eq!(run(&["verify", &fixture("circle"), "--reifenberg", "0.06", "0.1"]).0, 0);
    assert_eq!(run(&["verify", &fixture("circle"), "--reifenberg", "0.04", "0.1"]).0, 4);
    assert_eq!(run(&["verify", &fixture("half-space"), "--reifenberg", "0", "1"]).0, 0);
}

#[test]
fn opposition_command() {
    let (code, j) = run(&[
        "verify",
        &fixture("twin-children"),
        "--opposition",
        "left",
        "right",
        "--p=-5e-7,0",
        "--q=5e-7,0",
        "--scale",
        "1e-3",
    ]);
    assert_eq!(code, 0, "{j}");
    assert!(j["report"]["check"]["value"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let once = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_layerstack"))
            .args(["stack", &fixture("twin-children"), "--output-dir", d])
            .env("LAYERSTACK_THREADS", threads)
            .output()
            .unwrap();
        out.stdout
    };
    let a = once("1");
    assert_eq!(a, once("1"));
    assert_eq!(a, once("4"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["stack"]).0, 1);
    assert_eq!(run(&["verify", &fixture("circle")]).0, 1);
    assert_eq!(run(&["stack", &fixture("circle"), "--radius", "banana"]).0, 1);
}
