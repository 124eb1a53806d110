use randcvx_cli::ProblemSpec;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("corpus")
        .join(name)
}

fn randcvx(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_randcvx"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_value(spec: &Value, dir: &Path) -> (Output, Option<Value>) {
    let input = dir.join("problem.json");
    let output = dir.join("problem.report.json");
    std::fs::write(&input, spec.to_string()).unwrap();
    let out = randcvx(&[
        "--input".as_ref(),
        input.as_os_str(),
        "--output".as_ref(),
        output.as_os_str(),
    ]);
    let report = std::fs::read_to_string(&output)
        .ok()
        .map(|s| serde_json::from_str(&s).unwrap());
    (out, report)
}

fn num(v: &Value) -> f64 {
    v.as_str().expect("decimal string").parse().unwrap()
}

#[test]
fn glue_conjugate_tables_match_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value = serde_json::from_str(
        &std::fs::read_to_string(corpus("glue_half_square_abs.json")).unwrap(),
    )
    .unwrap();
    let xs = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    spec["params"] = json!({ "abscissae": xs.iter().map(|x| x.to_string()).collect::<Vec<_>>() });
    let (out, report) = run_value(&spec, dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result = &report.unwrap()["result"];
    assert_eq!(result["path"], "exact");
    let tables = result["tables"].as_array().unwrap();
    for (k, x) in xs.iter().enumerate() {
        assert_eq!(num(&tables[0]["values"][k]), 0.5 * x * x);
        let expected = if x.abs() <= 1.0 { 0.0 } else { f64::INFINITY };
        assert_eq!(num(&tables[1]["values"][k]), expected);
    }
    let csv = std::fs::read_to_string(dir.path().join("problem.report.csv")).unwrap();
    assert!(csv.starts_with("atom,x,value,trusted\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * xs.len());
}

#[test]
fn ekeland_on_square_lands_at_the_minimiser() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("ekeland.report.json");
    let out = randcvx(&[
        "--input".as_ref(),
        data("ekeland.json").as_os_str(),
        "--output".as_ref(),
        output.as_os_str(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(output).unwrap()).unwrap();
    let result = &report["result"];
    assert_eq!(num(&result["x_lambda"][0][0]), 0.0);
    assert!(num(&result["condition1_slack"][0]).abs() < 1e-12);
    assert!(num(&result["condition2_slack"][0]).abs() < 1e-12);
}

#[test]
fn ekeland_with_too_small_eps_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value =
        serde_json::from_str(&std::fs::read_to_string(data("ekeland.json")).unwrap()).unwrap();
    spec["params"]["eps"] = json!(["0.001"]);
    let (out, _) = run_value(&spec, dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn empty_base_is_a_schema_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value =
        serde_json::from_str(&std::fs::read_to_string(data("ekeland.json")).unwrap()).unwrap();
    spec["base"]["atoms"] = json!([]);
    let (out, report) = run_value(&spec, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("base.atoms"));
    assert!(report.is_none());
}

#[test]
fn malformed_field_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value =
        serde_json::from_str(&std::fs::read_to_string(data("ekeland.json")).unwrap()).unwrap();
    spec["point"] = json!([["not a number"]]);
    let (out, _) = run_value(&spec, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("point"));
}

#[test]
fn corpus_specs_round_trip() {
    for entry in std::fs::read_dir(corpus("")).unwrap() {
        let path = entry.unwrap().path();
        let spec = ProblemSpec::load(&path).unwrap();
        let again = ProblemSpec::parse(&spec.to_json()).unwrap();
        assert_eq!(spec.to_json(), again.to_json(), "{}", path.display());
    }
}

#[test]
fn empty_corpus_passes_with_no_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = randcvx(&["--corpus".as_ref(), dir.path().as_os_str()]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 0);
    assert_eq!(summary["failures"], 0);
}

#[test]
fn non_local_blackbox_fails_exactly_its_expected_suites() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        corpus("scenario_coupled_blackbox.json"),
        dir.path().join("coupled.json"),
    )
    .unwrap();
    let out = randcvx(&[
        "--corpus".as_ref(),
        dir.path().as_os_str(),
        "--seed".as_ref(),
        "3".as_ref(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let row = &summary["rows"][0];
    assert_eq!(row["ok"], true);
    assert_eq!(row["verdicts"]["locality"]["status"], "fail");
    assert_eq!(row["verdicts"]["convexity"]["status"], "fail");
}

#[test]
fn unmet_expectation_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value = serde_json::from_str(
        &std::fs::read_to_string(corpus("scenario_coupled_blackbox.json")).unwrap(),
    )
    .unwrap();
    spec["expect_fail"] = json!([]);
    std::fs::write(dir.path().join("coupled.json"), spec.to_string()).unwrap();
    let out = randcvx(&["--corpus".as_ref(), dir.path().as_os_str()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL coupled.json"));
}
