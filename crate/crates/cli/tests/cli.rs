use std::path::Path;
use std::process::{Command, Output};

fn cqrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqrf")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = cqrf(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_train_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--model", "aft", "--n", "1000", "--p", "20", "--seed", "7", "--out", "d.csv"]);
    ok(d, &["train", "--data", "d.csv", "--trees", "1000", "--min-node-size", "20", "--weights", "quantile", "--seed", "7", "--model-out", "f.json"]);
    ok(d, &["predict", "--model", "f.json", "--data", "d.csv", "--tau", "0.9", "--out", "q.csv"]);
    let q = std::fs::read_to_string(d.join("q.csv")).unwrap();
    let mut lines = q.lines();
    assert_eq!(lines.next(), Some("row,tau,q_hat,score_abs,degenerate"));
    assert_eq!(lines.count(), 1000);

    ok(d, &["survcurve", "--model", "f.json", "--data", "d.csv", "--row", "3", "--out", "g.csv"]);
    ok(d, &["weights", "--model", "f.json", "--data", "d.csv", "--x", "1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1", "--out", "w.csv"]);
    let w = std::fs::read_to_string(d.join("w.csv")).unwrap();
    let total: f64 = w.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn tau_outside_unit_interval_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for tau in ["1.5", "0", "-0.2"] {
        let out = cqrf(dir.path(), &["predict", "--model", "f.json", "--data", "d.csv", &format!("--tau={tau}"), "--out", "q.csv"]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("--tau"));
    }
    assert!(!dir.path().join("q.csv").exists());
}

#[test]
fn failures_leave_no_output_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = cqrf(dir.path(), &["train", "--data", "missing.csv", "--model-out", "f.json"]);
    assert!(!out.status.success());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn benchmark_table_covers_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["benchmark", "--model", "aft", "--n", "200", "--n-test", "20", "--p", "3", "--trees", "20", "--node-sizes", "10,20", "--reps", "2", "--out", "b.csv"]);
    let table = std::fs::read_to_string(d.join("b.csv")).unwrap();
    for method in ["crf-quantile", "crf-generalized", "qrf", "grf", "qrf-oracle", "grf-oracle"] {
        for node in ["10", "20"] {
            for tau in ["0.3", "0.5", "0.7"] {
                let prefix = format!("{method},{node},{tau},quantile_loss,");
                assert!(table.lines().any(|l| l.starts_with(&prefix)), "missing {prefix}");
            }
        }
    }
}

#[test]
fn aft_benchmark_corrected_beats_naive_at_0_7() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["benchmark", "--model", "aft", "--trees", "300", "--reps", "4", "--taus", "0.7", "--methods", "crf-quantile,crf-generalized,qrf,grf", "--out", "b.csv"]);
    let table = std::fs::read_to_string(d.join("b.csv")).unwrap();
    let mean = |method: &str, node: &str| -> f64 {
        let prefix = format!("{method},{node},0.7,quantile_loss,");
        let line = table.lines().find(|l| l.starts_with(&prefix)).unwrap();
        line[prefix.len()..].split(',').next().unwrap().parse().unwrap()
    };
    for node in ["10", "20", "40", "80"] {
        assert!(mean("crf-quantile", node) < mean("qrf", node), "node {node}");
        assert!(mean("crf-generalized", node) < mean("grf", node), "node {node}");
    }
}
