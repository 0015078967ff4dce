use std::path::Path;
use std::process::{Command, Output};

use contact_shape_cli::emit::{self, IdemCsvRow, ScanCsvRow, ShapeCsvRow};
use contact_shape_cli::{RunManifest, RunStatus};
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contact-shape"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out").arg(dir).output().unwrap()
}

const QUICK: [&str; 6] = ["--replicas", "30", "--t-surv", "10", "--window-factor", "2"];

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    let v: serde_json::Value = serde_json::from_str(&line).expect("error record is json");
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn single_rate_scan_is_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["scan", "--lambda", "2.2", "--n", "4", "--target-accepted", "10"];
    args.extend(QUICK);
    let out = run_in(tmp.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<ScanCsvRow> = emit::from_csv(&std::fs::read(tmp.path().join("scan.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].lambda, 2.2);
    assert!(rows[0].accepted >= 10);
}

#[test]
fn schema_violations_exit_2_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["scan", "--lambda", "3.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "schema");
    // Nothing is written before validation passes.
    assert!(!tmp.path().join("manifest.json").exists());

    let out = run_in(tmp.path(), &["scan", "--lambda-grid", "2.4,2.2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(tmp.path(), &["idem", "--formats", "svg"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["scan", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exhausted_retries_exit_3_with_partial_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "shape",
            "--lambda",
            "3",
            "--t",
            "30",
            "--t-surv",
            "1",
            "--window-factor",
            "0.1",
            "--growth-constant",
            "0.01",
            "--replicas",
            "20",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_kind(&out), "exhausted");
    let m = RunManifest::load(&tmp.path().join("manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Partial);
    assert!(m.caveats.iter().any(|c| c.starts_with("partial results")));
    let rows: Vec<ShapeCsvRow> = emit::from_csv(&std::fs::read(tmp.path().join("shape.csv")).unwrap()).unwrap();
    assert!(rows.is_empty());
}

#[test]
fn thread_cap_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .env("CONTACT_SHAPE_THREADS", "zero")
        .args(["oracle-check", "--replicas", "100", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .env("CONTACT_SHAPE_THREADS", "1")
        .args(["oracle-check", "--replicas", "100", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"lambda": 2.0, "replicas": 25, "t": 2.0, "lambda_prime": 1.9, "s_radius": 1}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let out = bin()
        .args(["idem", "--config", cfg.to_str().unwrap(), "--t", "3", "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<IdemCsvRow> = emit::from_csv(&std::fs::read(out_dir.join("idem.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].t, 3.0);
    assert_eq!(rows[0].lambda_prime, 1.9);
    // Both endpoints in [-1, 1]: two edges.
    assert_eq!(rows[0].s_size, 2);
    let m = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(m.config.replicas, 25);
    assert_eq!(m.config.t, Some(3.0));
}

#[test]
fn unknown_config_keys_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"lamda": 2.0}"#).unwrap();
    let out = bin().args(["idem", "--config", cfg.to_str().unwrap()]).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_check_default_reports_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["oracle-check", "--replicas", "5000"]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(report["states"], 32);
    assert_eq!(report["pass"], true);
    assert!(report["p_value"].as_f64().unwrap() > 1e-3);
}

#[test]
fn shape_svg_has_one_outline_per_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["shape", "--dimension", "2", "--lambda-grid", "2,2.5,3", "--t", "3", "--formats", "csv,svg"];
    args.extend(QUICK);
    let out = run_in(tmp.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<ShapeCsvRow> = emit::from_csv(&std::fs::read(tmp.path().join("shape.csv")).unwrap()).unwrap();
    let mut rates: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    rates.dedup();
    let svg = std::fs::read_to_string(tmp.path().join("shape.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), rates.len());
    assert_eq!(rates.len(), 3);
    // Closed outlines: each polyline ends where it starts.
    for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
        let pts: Vec<&str> = line.split('"').nth(1).unwrap().split(' ').collect();
        assert_eq!(pts.first(), pts.last());
        assert_eq!(pts.len(), 9);
    }
}

#[test]
fn emitted_csvs_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["scan", "--lambda-grid", "1.8,2.4", "--n", "3", "--target-accepted", "5"];
    args.extend(QUICK);
    assert!(run_in(tmp.path(), &args).status.success());
    let bytes = std::fs::read(tmp.path().join("scan.csv")).unwrap();
    let rows: Vec<ScanCsvRow> = emit::from_csv(&bytes).unwrap();
    assert_eq!(emit::to_csv(&rows).unwrap(), bytes);
}

fn finite_or_nan() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), Just(f64::NAN), Just(0.0)]
}

proptest! {
    #[test]
    fn scan_rows_round_trip(
        rows in prop::collection::vec(
            (finite_or_nan(), "[0-9;-]{1,6}", finite_or_nan(), finite_or_nan(), 0usize..5000, 0usize..5000, "[a-z_:|0-9]{0,20}"),
            0..20,
        )
    ) {
        let rows: Vec<ScanCsvRow> = rows
            .into_iter()
            .map(|(lambda, direction, mu_hat, stderr, accepted, replicas, flags)| ScanCsvRow {
                lambda, direction, mu_hat, stderr, accepted, replicas, flags,
            })
            .collect();
        let bytes = emit::to_csv(&rows).unwrap();
        let parsed: Vec<ScanCsvRow> = emit::from_csv(&bytes).unwrap();
        prop_assert_eq!(emit::to_csv(&parsed).unwrap(), bytes);
    }

    #[test]
    fn shape_and_idem_rows_round_trip(
        shape in prop::collection::vec((finite_or_nan(), finite_or_nan(), -5.0f64..5.0, -5.0f64..5.0, finite_or_nan(), finite_or_nan()), 0..10),
        idem in prop::collection::vec((finite_or_nan(), finite_or_nan(), 0usize..1000, finite_or_nan(), finite_or_nan(), finite_or_nan(), finite_or_nan()), 0..10),
    ) {
        let shape: Vec<ShapeCsvRow> = shape
            .into_iter()
            .map(|(lambda, t, a, b, radius, stderr)| ShapeCsvRow {
                lambda, t, direction: emit::format_direction(&[a, b]), radius, stderr,
            })
            .collect();
        let bytes = emit::to_csv(&shape).unwrap();
        prop_assert_eq!(emit::to_csv(&emit::from_csv::<ShapeCsvRow>(&bytes).unwrap()).unwrap(), bytes);
        let idem: Vec<IdemCsvRow> = idem
            .into_iter()
            .map(|(lambda, lambda_prime, s_size, t, p_hat, stderr, analytic_bound)| IdemCsvRow {
                lambda, lambda_prime, s_size, t, p_hat, stderr, analytic_bound,
            })
            .collect();
        let bytes = emit::to_csv(&idem).unwrap();
        prop_assert_eq!(emit::to_csv(&emit::from_csv::<IdemCsvRow>(&bytes).unwrap()).unwrap(), bytes);
    }
}
