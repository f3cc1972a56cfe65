use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn dimgroup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimgroup")).args(args).output().expect("run dimgroup")
}

fn write(dir: &TempDir, name: &str, value: &Value) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, value.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)))
}

fn stationary(flags: Value) -> Value {
    let stage = json!({"matrix": [["1", "2"], ["2", "1"]], "p": "3"});
    json!({"version": "dimgroup-realization/1", "flags": flags, "stages": [stage.clone(), stage.clone(), stage]})
}

#[test]
fn split_ecs_build_has_three_by_three_stages() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.json", &json!({"k": 1, "stages": [
        {"p": 5, "v": [0], "B": [[1]]}, {"p": 7, "v": [0], "B": [[1]]}, {"p": 11, "v": [0], "B": [[1]]}
    ]}));
    let output = dir.path().join("out.json");
    let out = dimgroup(&["build", "ecs", "-i", s(&input), "-o", s(&output), "--epsilon", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file: Value = serde_json::from_str(&fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(file["version"], "dimgroup-realization/1");
    assert_eq!(file["flags"]["ecs"], true);
    assert_eq!(file["provenance"]["pipeline"], "ecs");
    for stage in file["stages"].as_array().unwrap() {
        let m = stage["matrix"].as_array().unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|r| r.as_array().unwrap().len() == 3 && r[0].is_string()));
    }
    assert_eq!(dimgroup(&["verify", "-i", s(&output)]).status.code(), Some(0));
}

#[test]
fn lambda_too_small_reports_reason() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.json", &json!({"k": 2, "lambda": 2, "rho": [1, 1], "p_seq": [7, 13, 19]}));
    let out = dimgroup(&["build", "ecrs", "-i", s(&input), "-o", s(&dir.path().join("out.json"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "LambdaTooSmall");
    assert_eq!(err["error"]["details"]["reason"], "rank_exceeds_index");
    assert_eq!(err["error"]["details"]["rank"], 3);
}

#[test]
fn malformed_and_missing_inputs() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"k\": 1, \"stages\": [").unwrap();
    let out = dimgroup(&["build", "ecs", "-i", s(&bad), "-o", s(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "Schema");

    // Fields that parse but violate the schema's invariants are schema errors too.
    let wrong = write(&dir, "wrong.json", &json!({"k": 2, "stages": [{"p": 5, "v": [0], "B": [[1]]}]}));
    let out = dimgroup(&["build", "ecs", "-i", s(&wrong), "-o", s(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = dimgroup(&["verify", "-i", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(error_json(&out)["error"]["kind"], "Io");
}

#[test]
fn wrong_version_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let mut file = stationary(json!({"ecs": true}));
    file["version"] = json!("dimgroup-realization/0");
    let path = write(&dir, "r.json", &file);
    assert_eq!(dimgroup(&["verify", "-i", s(&path)]).status.code(), Some(2));
}

#[test]
fn hand_written_stationary_ecrs_verifies() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "r.json", &stationary(json!({"ecs": true, "ers": true, "ecrs": true, "primitive": true})));
    let out = dimgroup(&["verify", "-i", s(&path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["verified"]["ecrs"], true);
    assert_eq!(report["stages"][0]["row_sums"], json!(["3", "3"]));
    assert_eq!(report["stages"][0]["perron"]["eigenvalue"], "3");
    assert_eq!(report["kernel_ranks"], json!([0, 0, 0]));
}

#[test]
fn false_claim_fails_verification() {
    let dir = TempDir::new().unwrap();
    let mut file = stationary(json!({"ecs": true}));
    file["stages"][2]["matrix"] = json!([["1", "1"], ["2", "1"]]);
    let path = write(&dir, "r.json", &file);
    let out = dimgroup(&["verify", "-i", s(&path)]);
    assert_eq!(out.status.code(), Some(4));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["failures"][0]["stage"], 2);
    assert_eq!(report["failures"][0]["check"], "column_sums");
}

#[test]
fn decide_prints_decision() {
    let dir = TempDir::new().unwrap();
    let group = write(&dir, "g.json", &json!({"finite": {"3": 2}, "infinite": []}));
    let out = dimgroup(&["decide", "--rank", "2", "--group", s(&group), "--lambda", "3"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["decision"]["exists"], true);
    assert_eq!(v["decision"]["size"], json!({"exactly": 3}));

    let group = write(&dir, "h.json", &json!({"infinite": [5]}));
    let out = dimgroup(&["decide", "--rank", "inf", "--group", s(&group), "--lambda", "inf"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["decision"]["reason"], "p_divisible");
    assert_eq!(v["decision"]["size"], "unbounded");
}

#[test]
fn telescope_composes_and_keeps_flags() {
    let dir = TempDir::new().unwrap();
    let flags = json!({"ecs": true, "ers": true, "ecrs": true, "primitive": true});
    let input = write(&dir, "r.json", &stationary(flags.clone()));

    let trivial = dir.path().join("t0.json");
    assert!(dimgroup(&["telescope", "-i", s(&input), "--cuts", "0,1,2,3", "-o", s(&trivial)]).status.success());
    let t: Value = serde_json::from_str(&fs::read_to_string(&trivial).unwrap()).unwrap();
    let original = stationary(flags.clone());
    assert_eq!(t["stages"], original["stages"]);

    let composed = dir.path().join("t1.json");
    let out = dimgroup(&["telescope", "-i", s(&input), "--cuts", "0,2", "-o", s(&composed)]);
    assert!(out.status.success());
    let t: Value = serde_json::from_str(&fs::read_to_string(&composed).unwrap()).unwrap();
    assert_eq!(t["stages"][0]["p"], "9");
    assert_eq!(t["stages"][0]["matrix"], json!([["5", "4"], ["4", "5"]]));
    assert_eq!(t["flags"], flags);
    assert_eq!(dimgroup(&["verify", "-i", s(&composed)]).status.code(), Some(0));

    let out = dimgroup(&["telescope", "-i", s(&input), "--cuts", "2,1", "-o", s(&composed)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn telescope_drops_unverifiable_flags() {
    let dir = TempDir::new().unwrap();
    // Row sums 2 and 4 make the ERS claim false.
    let lopsided = json!({"version": "dimgroup-realization/1", "flags": {"ecs": true, "ers": true},
        "stages": [{"matrix": [["1", "1"], ["2", "2"]], "p": "3"}]});
    let input = write(&dir, "l.json", &lopsided);
    let out_path = dir.path().join("t.json");
    let out = dimgroup(&["telescope", "-i", s(&input), "--cuts", "0,1", "-o", s(&out_path)]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["lost_flags"], json!(["ers"]));
    let t: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(t["flags"]["ers"], false);
}

#[test]
fn strict_bounds_accepts_converged_ers() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.json", &json!({"k": 1, "stages": [
        {"p": 100, "u": [3], "B": [[1]]}, {"p": 1000, "u": [-7], "B": [[1]]}, {"p": 10000, "u": [11], "B": [[1]]}
    ], "trace_row": [[1, 1], [1, 3]]}));
    let output = dir.path().join("out.json");
    let out = dimgroup(&["build", "ers", "-i", s(&input), "-o", s(&output), "--strict-bounds", "--horizon", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file: Value = serde_json::from_str(&fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(file["flags"]["ers"], true);
    assert_eq!(file["markers"].as_array().unwrap().len(), file["stages"].as_array().unwrap().len() + 1);
    assert_eq!(dimgroup(&["verify", "-i", s(&output)]).status.code(), Some(0));
}
