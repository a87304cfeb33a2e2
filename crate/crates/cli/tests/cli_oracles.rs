use std::path::{Path, PathBuf};
use std::process::Command;

use quasilab_arithmetics::golden_mean;
use quasilab_cli::config::sha256_hex;
use quasilab_eigensolver::sturm_count;
use quasilab_operators::build_amo;

fn out_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("quasilab-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn quasilab(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_quasilab")).arg("--out-dir").arg(dir).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Data rows of an artifact CSV (after the `#` header and the column line).
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn result_json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let d = out_dir("usage");
    assert_eq!(quasilab(&d, &["spectrum", "lambda=abc"]).0, 2);
    assert_eq!(quasilab(&d, &["spectrum", "nonsense=1"]).0, 2);
    assert_eq!(quasilab(&d, &["spectrum", "lambda"]).0, 2);
    assert_eq!(quasilab(&d, &["frobnicate"]).0, 2);
    assert_eq!(quasilab(&d, &["--config", "/nonexistent/file", "spectrum"]).0, 2);
}

#[test]
fn free_laplacian_spectrum() {
    let d = out_dir("free");
    assert_eq!(quasilab(&d, &["spectrum", "lambda=0", "N=10"]).0, 0);
    let vals: Vec<f64> = rows(&read(&d, "spectrum_values.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    let n = vals.len();
    assert_eq!(n, 21);
    let mut oracle: Vec<f64> = (1..=n).map(|k| 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos()).collect();
    oracle.sort_by(f64::total_cmp);
    for (a, b) in vals.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn amo_spectrum_matches_sturm_counts() {
    let d = out_dir("amo");
    assert_eq!(quasilab(&d, &["spectrum", "lambda=2", "N=25"]).0, 0);
    let vals: Vec<f64> = rows(&read(&d, "spectrum_values.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    let (diag, off) = build_amo(2.0, golden_mean(), 0.0, 25).unwrap().tridiagonal.unwrap();
    for w in vals.windows(2).filter(|w| w[1] - w[0] > 1e-8) {
        let mid = 0.5 * (w[0] + w[1]);
        let below = vals.iter().filter(|&&v| v < mid).count();
        assert_eq!(sturm_count(&diag, &off, mid), below);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (out_dir("rerun-a"), out_dir("rerun-b"));
    for args in [&["--seed", "9", "criterion", "count=20"][..], &["--seed", "9", "edl", "N=20", "grid=12", "bootstrap=20"][..]] {
        assert_eq!(quasilab(&a, args).0, 0);
        assert_eq!(quasilab(&b, args).0, 0);
    }
    for name in ["criterion.csv", "criterion.json", "edl_profile.csv", "edl_fit.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
}

#[test]
fn artifacts_embed_config_and_hashes() {
    let d = out_dir("hash");
    let cfg = d.with_extension("cfg");
    std::fs::create_dir_all(&d).unwrap();
    std::fs::write(&cfg, "# comment\nlambda = 5\nN = 12\n").unwrap();
    assert_eq!(quasilab(&d, &["--config", cfg.to_str().unwrap(), "spectrum", "lambda=6"]).0, 0);
    let doc = result_json(&d, "spectrum_report.json");
    assert_eq!(doc["config"]["params"]["lambda"], "6");
    assert_eq!(doc["config"]["params"]["N"], "12");
    assert_eq!(doc["config"]["params"]["family"], "amo");
    let payload = serde_json::to_string(&doc["result"]).unwrap();
    assert_eq!(doc["content_sha256"], sha256_hex(payload.as_bytes()));
    let csv = read(&d, "spectrum_values.csv");
    let header: Vec<&str> = csv.lines().take(3).collect();
    let body: String = csv.lines().skip(3).map(|l| format!("{l}\n")).collect();
    assert_eq!(header[2], format!("# content_sha256: {}", sha256_hex(body.as_bytes())));
    assert!(header[0].contains("\"lambda\":\"6\""));
    let _ = std::fs::remove_file(cfg);
}

#[test]
fn edl_null_case() {
    let d = out_dir("edl0");
    assert_eq!(quasilab(&d, &["edl", "lambda=0", "N=30", "grid=10", "bootstrap=10"]).0, 0);
    let g = result_json(&d, "edl_fit.json")["result"]["gamma_hat"].as_f64().unwrap();
    assert!(g.abs() < 0.1, "{g}");
}

#[test]
fn synthetic_kam_round_trip() {
    let d = out_dir("kam");
    assert_eq!(quasilab(&d, &["kam", "model=synthetic", "h=0.5", "h_tilde=0.25"]).0, 0);
    let doc = result_json(&d, "kam_trace.json");
    let err = doc["result"]["synthetic"]["error"].as_f64().unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn unforced_gate_exits_4() {
    let d = out_dir("gate");
    let (code, err) = quasilab(&d, &["kam", "force=false"]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn criterion_has_no_violations() {
    let d = out_dir("crit");
    assert_eq!(quasilab(&d, &["criterion", "count=30"]).0, 0);
    assert_eq!(result_json(&d, "criterion.json")["result"]["violations"], 0);
    assert!(rows(&read(&d, "criterion.csv")).iter().all(|r| r[11] == "true"));
}
