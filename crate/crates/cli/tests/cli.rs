use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn volwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volwatch"))
        .args(args)
        .env_remove("VOLWATCH_CV_CACHE")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_values(path: &Path) -> Vec<f64> {
    volwatch::ReturnsFile::load(path).unwrap().values()
}

#[test]
fn cv_matches_table_and_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cv.csv");
    let args = ["cv", "--scheme", "weighted", "--eta", "0.3", "--level", "0.10", "--cache", p(&cache)];
    let first = stdout(&ok(volwatch(&args)));
    let row = first.lines().nth(1).unwrap();
    let c: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((c - 6.173).abs() < 0.15, "c = {c}");
    assert!(cache.exists());
    let second = stdout(&ok(volwatch(&args)));
    assert_eq!(first, second);
}

#[test]
fn cv_requires_eta() {
    let o = volwatch(&["cv", "--scheme", "weighted"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--eta"));
}

#[test]
fn simulate_rows_seed_and_switch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--theta0".into(),
            "0.1,0.18,0.8".into(),
            "--thetaA".into(),
            "0.1,0.18,0.9".into(),
            "--kstar".into(),
            "22".into(),
            "--m".into(),
            "1000".into(),
            "--n".into(),
            "500".into(),
            "--seed".into(),
            "17".into(),
            "--out".into(),
            p(out).to_string(),
        ]
    };
    let args_a = args(&a);
    ok(volwatch(&args_a.iter().map(String::as_str).collect::<Vec<_>>()));
    let args_b = args(&b);
    ok(volwatch(&args_b.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let y = read_values(&a);
    assert_eq!(y.len(), 1500);
    let var = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    let pre = var(&y[..1000]);
    let post = var(&y[1300..]);
    assert!(post / pre > 10.0, "variance ratio {}", post / pre);
}

#[test]
fn simulate_rejects_half_specified_change() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = volwatch(&["simulate", "--theta0", "0.1,0.18,0.8", "--kstar", "3", "--m", "10", "--n", "10", "--out", p(&out)]);
    assert!(!o.status.success());
}

fn two_regime_fixture(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("two_regime.csv");
    ok(volwatch(&[
        "simulate", "--theta0", "0.1,0.18,0.8", "--thetaA", "0.1,0.18,1.0", "--kstar", "30", "--m", "1000", "--n",
        "400", "--seed", "5", "--out", p(&path),
    ]));
    // Attach calendar labels.
    let values = read_values(&path);
    let mut text = String::from("date,return\n");
    for (i, v) in values.iter().enumerate() {
        text.push_str(&format!("2000-01-01+{i},{v}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn monitor_detects_after_change() {
    let dir = tempfile::tempdir().unwrap();
    let data = two_regime_fixture(dir.path());
    let out = dir.path().join("report.json");
    ok(volwatch(&[
        "monitor", "--data", p(&data), "--m", "1000", "--n", "400", "--scheme", "weighted", "--eta", "0.5", "--c",
        "7.934", "--seed", "1", "--out", p(&out),
    ]));
    let text = fs::read_to_string(&out).unwrap();
    let report: volwatch::RunReport = serde_json::from_str(&text).unwrap();
    let volwatch::report::ReportOutcome::Detected { k, date, .. } = &report.outcome else {
        panic!("expected a detection: {text}")
    };
    assert!(*k > 30, "k = {k}");
    assert_eq!(date.as_deref(), Some(format!("2000-01-01+{}", 1000 + k - 1).as_str()));
    assert_eq!(report.trace.len(), *k);
    assert_eq!(serde_json::to_string_pretty(&report).unwrap(), text);
}

#[test]
fn monitor_with_table_lookup_and_renyi() {
    let dir = tempfile::tempdir().unwrap();
    let data = two_regime_fixture(dir.path());
    let cache = dir.path().join("cv.csv");
    let o = ok(volwatch(&[
        "monitor", "--data", p(&data), "--m", "1000", "--n", "400", "--scheme", "renyi", "--eta", "1.5",
        "--cv-cache", p(&cache), "--seed", "2",
    ]));
    let report: volwatch::RunReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.config.c_source, "table");
    assert_eq!(report.trace[0].k, 20);
    assert!(cache.exists());
}

#[test]
fn monitor_null_with_huge_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("null.csv");
    ok(volwatch(&["simulate", "--theta0", "0.1,0.18,0.8", "--m", "600", "--n", "200", "--seed", "9", "--out", p(&data)]));
    let o = ok(volwatch(&["monitor", "--data", p(&data), "--m", "600", "--n", "200", "--c", "1e30", "--seed", "3"]));
    let report: volwatch::RunReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.outcome, volwatch::report::ReportOutcome::NoChange { horizon_n: 200 });
    assert_eq!(report.trace.len(), 199);
}

#[test]
fn monitor_rejects_short_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("short.csv");
    ok(volwatch(&["simulate", "--theta0", "0.1,0.18,0.8", "--m", "600", "--n", "100", "--seed", "9", "--out", p(&data)]));
    let o = volwatch(&["monitor", "--data", p(&data), "--m", "600", "--n", "200", "--c", "7", "--seed", "3"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("rows"));
}

const SIZE_PLAN: &str = r#"{
  "theta0": {"omega": 0.1, "alpha": 0.18, "beta": 0.8},
  "m": 1000, "n": 500,
  "schemes": [{"kind": "weighted", "eta": 0.3}],
  "level": 0.05, "reps": 1000, "tuned": true, "seed": 42
}"#;

#[test]
fn experiment_size_cell() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(&plan, SIZE_PLAN).unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cv.csv");
    let o = ok(volwatch(&["experiment", "--plan", p(&plan), "--out", p(&out), "--cv-cache", p(&cache)]));
    let csv = stdout(&o);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let rate: f64 = row[4].parse().unwrap();
    assert!((rate - 0.048).abs() <= 0.02, "size {rate}");
    for f in ["results.csv", "delays.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap(), csv);
}

#[test]
fn experiment_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let out = dir.path().join("out");
    fs::write(&plan, SIZE_PLAN).unwrap();
    let o = volwatch(&["experiment", "--plan", p(&plan), "--out", p(&out), "--reps", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("reps"));

    fs::write(&plan, r#"{"theta0": {"omega": 0.1}, "m": 10}"#).unwrap();
    let o = volwatch(&["experiment", "--plan", p(&plan), "--out", p(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("plan"));
    assert!(!out.exists());
}
