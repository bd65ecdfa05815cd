use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lshpsi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lshpsi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn lshpsi")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lshpsi(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generated(n: &str, planted: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--n", n, "--planted", planted, "--seed", "3", "--out", "data"]);
    dir
}

fn loopback(dir: &Path, variant: &str, out: &str, extra: &[&str]) {
    let mut args = vec![
        "run", "--role", "sender", "--variant", variant,
        "--config", "data/linkage.toml", "--dataset", "data/left.csv",
        "--loopback", "data/right.csv", "--out", out, "--tau-sample", "50",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn generate_run_score_finds_every_planted_pair() {
    let dir = generated("120", "12");
    let d = dir.path();
    for f in ["left.csv", "right.csv", "truth.csv", "linkage.toml"] {
        assert!(d.join("data").join(f).exists(), "{f} missing");
    }
    loopback(d, "base", "m.csv", &[]);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("m.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["local_records"], 120);
    assert_eq!(manifest["bands"], 20);
    assert!(manifest["report"]["comm_kb"].as_f64().unwrap() > 0.0);
    assert!(manifest["leakage"]["tau"].as_f64().is_some());

    let summary = ok(d, &["score", "--matches", "m.csv", "--config", "data/linkage.toml", "--truth", "data/truth.csv"]);
    let summary: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["accuracy"]["recall"], 1.0);
    assert_eq!(summary["accuracy"]["false_negatives"], 0);
}

#[test]
fn match_files_are_reproducible() {
    let dir = generated("80", "8");
    let d = dir.path();
    loopback(d, "base", "a.csv", &[]);
    loopback(d, "base", "b.csv", &[]);
    let a = fs::read(d.join("a.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn count_and_revealing_outputs() {
    let dir = generated("60", "6");
    let d = dir.path();
    loopback(d, "base", "m.csv", &[]);
    loopback(d, "count", "c.txt", &[]);
    loopback(d, "revealing", "r.csv", &["--exact-jaccard"]);

    let base_rows = fs::read_to_string(d.join("m.csv")).unwrap().lines().count() - 1;
    let distinct: std::collections::BTreeSet<String> = fs::read_to_string(d.join("m.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_owned())
        .collect();
    let count = fs::read_to_string(d.join("c.txt")).unwrap();
    assert_eq!(count.lines().nth(1).unwrap().trim(), distinct.len().to_string());

    let mut rdr = csv::Reader::from_path(d.join("r.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let revealed = headers.iter().position(|h| h == "revealed").unwrap();
    let exact = headers.iter().position(|h| h == "exact_jaccard").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), base_rows);
    for row in &rows {
        let fields: Value = serde_json::from_str(&row[revealed]).unwrap();
        assert!(fields["first_name"].is_string());
        let j: f64 = row[exact].parse().unwrap();
        assert!((0.0..=1.0).contains(&j));
    }
}

#[test]
fn tune_reports_fewer_bands() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["tune", "--bands", "20", "--rows", "200"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["bands"].as_u64().unwrap() <= 20);
    assert!(v["max_deviation"].as_f64().unwrap() <= 0.05);
}

#[test]
fn certs_then_tls_session() {
    let dir = generated("40", "4");
    let d = dir.path();
    ok(d, &["certs", "--out", "pki"]);
    for f in ["ca.pem", "sender.pem", "sender.key", "receiver.pem", "receiver.key"] {
        assert!(d.join("pki").join(f).exists(), "{f} missing");
    }
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let mut receiver = Command::new(env!("CARGO_BIN_EXE_lshpsi"))
        .current_dir(d)
        .args([
            "run", "--role", "receiver", "--config", "data/linkage.toml", "--dataset", "data/right.csv",
            "--listen", &addr, "--cert", "pki/receiver.pem", "--key", "pki/receiver.key", "--ca", "pki/ca.pem",
            "--out", "r.csv", "--tau-sample", "0",
        ])
        .spawn()
        .unwrap();
    let sender_args = [
        "run", "--role", "sender", "--config", "data/linkage.toml", "--dataset", "data/left.csv",
        "--connect", &addr, "--cert", "pki/sender.pem", "--key", "pki/sender.key", "--ca", "pki/ca.pem",
        "--out", "s.csv", "--tau-sample", "0",
    ];
    let mut sent = lshpsi(d, &sender_args);
    for _ in 0..50 {
        if sent.status.success() {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
        sent = lshpsi(d, &sender_args);
    }
    assert!(sent.status.success(), "{}", String::from_utf8_lossy(&sent.stderr));
    assert!(receiver.wait().unwrap().success());

    loopback(d, "base", "m.csv", &[]);
    let strip = |p: &str| -> Vec<String> {
        fs::read_to_string(d.join(p))
            .unwrap()
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(1);
                f.join(",")
            })
            .collect()
    };
    assert_eq!(strip("s.csv"), strip("m.csv"));
}

#[test]
fn errors_exit_with_their_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = lshpsi(
        dir.path(),
        &["run", "--role", "sender", "--config", "missing.toml", "--dataset", "x.csv", "--loopback", "y.csv", "--out", "o.csv"],
    );
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Config"));
}

#[test]
fn bench_writes_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["bench", "--sizes", "16,32", "--bands", "4", "--out", "bench.csv"]);
    let text = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("16,"));
    assert!(lines[2].starts_with("32,"));
}
