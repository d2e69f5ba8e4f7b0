use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn diqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diqkd"))
        .args(args)
        .env_remove("DIQKD_CERT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn table(json: &str) -> Vec<f64> {
    let v: Value = serde_json::from_str(json).unwrap();
    let mut out = Vec::new();
    fn walk(v: &Value, out: &mut Vec<f64>) {
        match v {
            Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
            Value::Number(n) => out.push(n.as_f64().unwrap()),
            _ => panic!("unexpected {v}"),
        }
    }
    walk(&v["table"], &mut out);
    out
}

/// `(rho, value)` rows of a sweep CSV.
fn rows(csv: &str) -> Vec<(f64, f64)> {
    let mut lines = csv.lines();
    lines.next().unwrap();
    lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect()
}

#[test]
fn behavior_tables() {
    let hi = (2.0 + 2f64.sqrt()) / 8.0;
    let lo = (2.0 - 2f64.sqrt()) / 8.0;
    let flipped = table(&stdout(&diqkd(&["behavior", "--preset", "chsh", "--rho", "0"])));
    let raw = table(&stdout(&diqkd(&["behavior", "--preset", "chsh", "--rho", "0", "--no-flip"])));
    assert_eq!(flipped.len(), 16);
    for (t, (&f, &r)) in flipped.iter().zip(&raw).enumerate() {
        let (u, v, x, y) = (t / 8, (t / 4) % 2, (t / 2) % 2, t % 2);
        let anti = u == 1 && v == 1;
        let want = if (x == y) != anti { hi } else { lo };
        assert!((f - want).abs() < 1e-12, "cell {t}");
        // Raw outcomes are the same table with Bob's bit inverted.
        assert!((r - flipped[t ^ 1]).abs() < 1e-15);
    }
    let uniform = table(&stdout(&diqkd(&["behavior", "--rho", "1"])));
    assert_eq!(uniform.len(), 24);
    assert!(uniform.iter().all(|&p| (p - 0.25).abs() < 1e-12));
}

#[test]
fn pguess_sweep_row() {
    let out = stdout(&diqkd(&["pguess-sweep", "--preset", "chsh", "--rho", "0.06"]));
    assert!(out.starts_with("rho,pguess\n"));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].0, 0.06);
    assert!((r[0].1 - 0.7285).abs() < 1e-2);
}

#[test]
fn lower_levels_give_weaker_bounds() {
    let run = |level: &str| {
        rows(&stdout(&diqkd(&[
            "pguess-sweep", "--preset", "chsh", "--grid", "0:0.3:0.1", "--level", level,
        ])))
    };
    let (l1, l2) = (run("1"), run("2"));
    assert_eq!(l1.len(), 4);
    for (a, b) in l1.iter().zip(&l2) {
        assert_eq!(a.0, b.0);
        // Printed to six decimals.
        assert!(a.1 >= b.1 - 1e-6, "rho {}: {} < {}", a.0, a.1, b.1);
    }
}

#[test]
fn keyrate_modes() {
    let run = |mode: &str| {
        rows(&stdout(&diqkd(&[
            "keyrate-sweep", "--preset", "chsh", "--rho", "0", "--rho", "0.03", "--rho", "0.06",
            "--delta-mode", mode,
        ])))
    };
    let (fig, model) = (run("figure"), run("model"));
    for ((r, f), (_, m)) in fig.iter().zip(&model) {
        assert!(m >= f, "rho {r}");
    }
    for ((_, q), want) in fig.iter().zip([1.0, 0.3898, 0.1296]) {
        assert!((q - want).abs() < 1e-2);
    }
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> (Output, String) {
    let out = dir.join(name);
    let mut args = vec!["simulate", "--n", "100000", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = diqkd(&args);
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    (o, text)
}

#[test]
fn simulate_accepts_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let (o, text) = simulate(dir.path(), "a.json", &["--rho", "0", "--eta", "0.005", "--delta-max", "0", "--kappa", "0.01", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["outcome"], "accept");
    assert_eq!(v["reconciliation"]["failures"], 0);
    assert_eq!(v["reconciliation"]["raw_errors"], 0);
    assert_eq!(v["privacy_amplification"]["keys_match"], true);
    // Same seed, same bytes.
    let (_, again) = simulate(dir.path(), "b.json", &["--rho", "0", "--eta", "0.005", "--delta-max", "0", "--kappa", "0.01", "--seed", "5"]);
    assert_eq!(text, again);
}

#[test]
fn simulate_aborts_with_heavy_noise() {
    let dir = tempfile::tempdir().unwrap();
    let (o, text) = simulate(dir.path(), "a.json", &["--rho", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["outcome"], "abort");
    assert!(v["estimation"]["abort"]["reason"].is_string());
}

#[test]
fn certificates_validate_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("c.json");
    let cache = dir.path().join("cache");
    let args = [
        "certificate", "--preset", "chsh", "--rho", "0.06", "--out", cert.to_str().unwrap(),
        "--cert-dir", cache.to_str().unwrap(),
    ];
    stdout(&diqkd(&args));
    let first = std::fs::read_to_string(&cert).unwrap();
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    stdout(&diqkd(&args));
    assert_eq!(std::fs::read_to_string(&cert).unwrap(), first);
    let v = stdout(&diqkd(&["validate", cert.to_str().unwrap()]));
    assert_eq!(v.trim(), "certificate: valid");

    let mut broken: Value = serde_json::from_str(&first).unwrap();
    broken["lambda"].as_array_mut().unwrap().pop();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, broken.to_string()).unwrap();
    let o = diqkd(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("certificate: invalid"));
}

#[test]
fn bit_certificate_from_a_behavior_file() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b.json");
    std::fs::write(&b, stdout(&diqkd(&["behavior", "--preset", "chsh", "--rho", "0.1"]))).unwrap();
    assert_eq!(stdout(&diqkd(&["validate", b.to_str().unwrap()])).trim(), "behavior: valid");
    let out = stdout(&diqkd(&["certificate", "--behavior", b.to_str().unwrap(), "--kind", "bit"]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kind"], "bit_distance");
}

#[test]
fn bad_arguments_fail_cleanly() {
    for args in [
        vec!["pguess-sweep", "--grid", "0:2:0.5"],
        vec!["pguess-sweep"],
        vec!["behavior", "--rho", "1.5"],
        vec!["simulate", "--block-bits", "40"],
    ] {
        let o = diqkd(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
    assert!(!diqkd(&["no-such-command"]).status.success());
}
