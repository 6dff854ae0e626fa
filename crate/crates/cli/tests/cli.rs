use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn costa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costa")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, value: Value) -> String {
    let p = dir.join("config.in.json");
    fs::write(&p, value.to_string()).unwrap();
    p.to_str().unwrap().to_owned()
}

fn small_config(dir: &Path) -> String {
    write_config(
        dir,
        json!({
            "dataset": { "synthetic": { "n": 150, "d": 12 } },
            "train": { "hidden": 16, "epochs": 15 },
            "probe_seeds": 3,
            "bias": { "sampling": { "samples": 20 } },
            "bench": { "rows": 64, "cols": 8, "ks": [2, 8, 32], "trials": 20 }
        }),
    )
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn no_aug_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = costa(&["train", "--config", &cfg, "--mode", "no-aug", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["loss.csv", "probe.csv", "checkpoint.json", "report.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(read(out.join("probe.csv")).starts_with("seed,split_id,lambda,val_acc,test_acc\n"));
    assert_eq!(read(out.join("loss.csv")).lines().count(), 16);
    let report: Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    assert_eq!(report["config"]["mode"], "no-aug");
    assert_eq!(report["config"]["train"]["loss"]["sketch"]["method"], "identity");
    assert!(report["unverified_defaults"].as_array().unwrap().len() > 3);
}

#[test]
fn identical_runs_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for cmd in [["train", "--mode", "costa-mv"], ["bias-audit", "--samples", "10"], ["sketch-bench", "--threads", "1"]] {
        let a = dir.path().join(format!("{}-a", cmd[0]));
        let b = dir.path().join(format!("{}-b", cmd[0]));
        for out in [&a, &b] {
            let mut args = vec![cmd[0], "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()];
            args.extend_from_slice(&cmd[1..]);
            let o = costa(&args);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
        let mut csvs = 0;
        for entry in fs::read_dir(&a).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "csv") {
                csvs += 1;
                assert_eq!(fs::read(&p).unwrap(), fs::read(b.join(p.file_name().unwrap())).unwrap(), "{}", p.display());
            }
        }
        assert!(csvs > 0);
    }
}

#[test]
fn checkpoint_round_trips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = costa(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = out.join("checkpoint.json");
    let o = costa(&["eval", "--config", &cfg, "--seed", "3", "--checkpoint", ck.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(out.join("probe.csv")), read(out.join("eval_probe.csv")));
}

#[test]
fn missing_label_line_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.txt");
    fs::write(&graph, "3 2 2\n1 0\n0 1\n1 1\ne 0 1\ne 1 2\n").unwrap();
    let o = costa(&["train", "--dataset", graph.to_str().unwrap(), "--epochs", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing label line"));
}

#[test]
fn unlabeled_graph_cannot_be_probed() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.txt");
    fs::write(&graph, "3 2 0\n1 0\n0 1\n1 1\n-\ne 0 1\n").unwrap();
    let o = costa(&["train", "--dataset", graph.to_str().unwrap(), "--epochs", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), json!({ "train": { "epochs": 0 } }));
    assert_eq!(costa(&["train", "--config", &bad]).status.code(), Some(2));
    let unknown = write_config(dir.path(), json!({ "trian": {} }));
    assert_eq!(costa(&["train", "--config", &unknown]).status.code(), Some(2));
    assert_eq!(costa(&["train", "--mode", "bogus"]).status.code(), Some(2));
    assert_eq!(costa(&["train", "--density", "3"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({
            "dataset": { "synthetic": { "n": 60, "d": 6 } },
            "train": { "hidden": 8, "epochs": 40, "adam": { "lr": 1e300 } },
            "mode": "no-aug",
            "probe_seeds": 1
        }),
    );
    let out = dir.path().join("run");
    let o = costa(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint.json").exists());
}

#[test]
fn bias_audit_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("bias");
    let o = costa(&["bias-audit", "--config", &cfg, "--variants", "identity,gnn_ea,nn_a", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("bias.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["variant", "node", "degree", "bias"]);
    let mut identity = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        if &r[0] == "identity" {
            identity += 1;
            assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
        }
    }
    assert_eq!(identity, 150);
    assert!(out.join("bias_degree.csv").exists());
    let o = costa(&["bias-audit", "--variants", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bias_audit_defaults_to_five_hundred_samples() {
    let cfg = costa_cli::RunConfig::default().resolve(&Default::default()).unwrap();
    assert_eq!(cfg.bias.sampling.samples, 500);
}

#[test]
fn sketch_bench_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("bench");
    let o = costa(&["sketch-bench", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("bench_summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut svd_rows = 0;
    let mut sparse = Vec::new();
    for r in rdr.records() {
        let r = r.unwrap();
        match &r[col("method")] {
            "svd_sketch" => {
                svd_rows += 1;
                assert_eq!(&r[col("failures")], "0");
            }
            "sparse_rp" => sparse.push((r[col("s")].parse::<f64>().unwrap(), r[col("density")].parse::<f64>().unwrap(), r[col("k")].parse::<f64>().unwrap())),
            _ => {}
        }
    }
    assert_eq!(svd_rows, 2); // k = 32 exceeds min(n, d) = 8
    for (s, density, k) in sparse {
        let p = 1.0 / s;
        let n = 20.0 * k * 64.0;
        assert!((density - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt() + 1e-12, "s = {s}: {density}");
    }
    assert!(read(out.join("bench.csv")).starts_with("method,k,s,trial,cov_error\n"));
}
