use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sketchcv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchcv"))
        .args(args)
        .args(["--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = sketchcv(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let mut rows = vec![header];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

const SMALL_RUN: &[&str] = &[
    "inner-product",
    "--scheme",
    "fh",
    "--d",
    "200",
    "--k",
    "10,20",
    "--ratios",
    "1",
    "--angles",
    "0.2617993877991494",
    "--trials",
    "100",
    "--seed",
    "7",
];

#[test]
fn inner_product_writes_one_row_per_method_and_k() {
    let dir = tempfile::tempdir().unwrap();
    ok(SMALL_RUN, dir.path());
    let rows = read_csv(&dir.path().join("inner_product.csv"));
    assert_eq!(rows.len(), 1 + 12);
    assert_eq!(rows[0][0], "scheme");
    assert!(dir.path().join("inner_product.json").exists());
}

#[test]
fn inner_product_rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(SMALL_RUN, a.path());
    let mut args = SMALL_RUN.to_vec();
    args.extend(["--threads", "3"]);
    ok(&args, b.path());
    for name in ["inner_product.csv", "inner_product.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn csv_and_json_carry_identical_numbers() {
    let dir = tempfile::tempdir().unwrap();
    ok(SMALL_RUN, dir.path());
    let rows = read_csv(&dir.path().join("inner_product.csv"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("inner_product.json")).unwrap()).unwrap();
    let objects = json.as_array().unwrap();
    assert_eq!(objects.len(), rows.len() - 1);
    for (row, obj) in rows[1..].iter().zip(objects) {
        for (col, cell) in rows[0].iter().zip(row) {
            let v = &obj[col.as_str()];
            let rendered = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            assert_eq!(&rendered, cell, "column {col}");
        }
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"d": 200, "ratios": [1.0], "angles": [0.5], "k_values": [10, 20, 30], "trials": 50,
            "methods": ["baseline", "cv-em"]}"#,
    )
    .unwrap();
    ok(&["inner-product", "--config", cfg.to_str().unwrap(), "--k", "10"], dir.path());
    assert_eq!(read_csv(&dir.path().join("inner_product.csv")).len(), 1 + 2);
}

#[test]
fn unknown_config_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"trails": 10}"#).unwrap();
    let o = sketchcv(&["inner-product", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_trials_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sketchcv(&["inner-product", "--trials", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials must be ≥ 1"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, "").unwrap();
    let o = sketchcv(&["convergence", "--self-test"], &file.join("out"));
    assert_eq!(o.status.code(), Some(3));
}

fn write_matrix(dir: &Path, text: &str) -> String {
    let p = dir.join("m.txt");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn trace_reports_requested_methods() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_matrix(dir.path(), "2\n2 1\n1 3\n");
    ok(&["trace", &m, "--methods", "hutchinson,bekas", "--k", "100", "--trials", "200"], dir.path());
    let rows = read_csv(&dir.path().join("trace.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "hutchinson");
    assert_eq!(rows[2][0], "bekas");
}

#[test]
fn bekas_is_exact_on_diagonal_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_matrix(dir.path(), "3\n1 0 0\n0 2 0\n0 0 4\n");
    ok(&["trace", &m, "--methods", "bekas", "--k", "10", "--trials", "100"], dir.path());
    let rows = read_csv(&dir.path().join("trace.csv"));
    let mse_col = rows[0].iter().position(|c| c == "mse").unwrap();
    let mse: f64 = rows[1][mse_col].parse().unwrap();
    assert!(mse < 1e-24, "{mse}");
}

#[test]
fn asymmetric_matrix_is_rejected_with_indices() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_matrix(dir.path(), "2\n2 1\n1.5 3\n");
    let o = sketchcv(&["trace", &m], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains('0') && err.contains('1'), "{err}");
}

#[test]
fn equivalence_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["equivalence", "--trials", "300"], dir.path());
    let dev: f64 = out
        .trim()
        .strip_prefix("max relative deviation: ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev <= 1e-9);
}

#[test]
fn equivalence_bivariate_normal_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["equivalence", "--sigma", "1,1,0.5"], dir.path());
    assert!(out.contains("cv weights: -0.4, -0.4"), "{out}");
    assert!(out.contains("CVE variance: 0.45"), "{out}");
    assert!(out.contains("MLE variance: 0.45"), "{out}");
}

#[test]
fn equivalence_rejects_impossible_partition() {
    let dir = tempfile::tempdir().unwrap();
    let o = sketchcv(&["equivalence", "--p", "2", "--t", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_self_test_recovers_orders() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["convergence", "--self-test"], dir.path());
    let rows = read_csv(&dir.path().join("convergence_self_test.csv"));
    let alpha_col = rows[0].iter().position(|c| c == "alpha").unwrap();
    let alphas: Vec<f64> = rows[1..].iter().map(|r| r[alpha_col].parse().unwrap()).collect();
    assert_eq!(alphas.len(), 2);
    assert!((alphas[0] - 2.0).abs() < 1e-8 && (alphas[1] - 1.0).abs() < 1e-8, "{alphas:?}");
}

#[test]
fn convergence_study_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["convergence", "--d", "200", "--ratios", "1", "--angles", "0.5", "--trials", "50"],
        dir.path(),
    );
    let rows = read_csv(&dir.path().join("convergence.csv"));
    assert_eq!(rows.len(), 1 + 3);
    assert!(dir.path().join("convergence_samples.csv").exists());
}
