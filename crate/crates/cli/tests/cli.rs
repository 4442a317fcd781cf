//! End-to-end runs of the `peps-kernel` binary.

use peps_cli::output::{SolutionsFile, SpectrumFile};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peps-kernel"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn extract(name: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["extract", "-q", "-c"])
        .arg(config(name))
        .arg("--set")
        .arg(format!("output.dir={}", out.display()))
        .args(extra)
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn aklt_site_run_writes_full_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let out = extract("aklt-site-oracle.toml", dir.path(), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(text.starts_with("# [model]\n# name = \"aklt\"\n"));
    let rows = csv_rows(&dir.path().join("spectrum.csv"));
    assert_eq!(rows.len(), 25);
    let small = rows
        .iter()
        .filter(|r| r[1].parse::<f64>().unwrap() < 1e-9)
        .count();
    assert_eq!(small, 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), i);
    }
}

#[test]
fn json_floats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = extract("ising-plaquette-oracle.toml", dir.path(), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["spectrum.json", "solutions.json"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let again = if name == "spectrum.json" {
            serde_json::to_string_pretty(&serde_json::from_str::<SpectrumFile>(&text).unwrap())
        } else {
            serde_json::to_string_pretty(&serde_json::from_str::<SolutionsFile>(&text).unwrap())
        }
        .unwrap();
        assert_eq!(text, again + "\n", "{name}");
    }
    let csv = csv_rows(&dir.path().join("spectrum.csv"));
    let json: SpectrumFile =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectrum.json")).unwrap())
            .unwrap();
    for (r, e) in csv.iter().zip(&json.eigenvalues) {
        assert_eq!(r[1].parse::<f64>().unwrap().to_bits(), e.to_bits());
    }
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = extract("ising-plaquette-oracle.toml", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let sols = dir.path().join("solutions.json");
    let run = |args: &[&str]| {
        bin()
            .arg("verify")
            .arg("-s")
            .arg(&sols)
            .args(args)
            .output()
            .unwrap()
    };

    let ok = run(&["--check", "commutator", "--check", "duality"]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 2);
    assert_eq!(report["checks"][0]["check"], "commutator");

    // The solution is a nonzero operator, so it is not a trivial solution.
    let failed = run(&["--check", "global-op"]);
    assert_eq!(failed.status.code(), Some(2));

    let wrong_index = run(&["-i", "99", "--check", "global-op"]);
    assert_eq!(wrong_index.status.code(), Some(1));
}

#[test]
fn input_errors_exit_with_one() {
    let missing = bin()
        .args(["extract", "-c", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let usage = bin().arg("extract").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad_key = extract(
        "aklt-site-oracle.toml",
        dir.path(),
        &["--set", "backend.bogus=1"],
    );
    assert_eq!(bad_key.status.code(), Some(1));
    let bad_q = extract(
        "ising-plaquette-oracle.toml",
        dir.path(),
        &["--set", "momentum.n=1", "--set", "momentum.lx=3"],
    );
    assert_eq!(bad_q.status.code(), Some(1));
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn spectrum_export_combines_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        extract("aklt-site-oracle.toml", &a, &[]).status.code(),
        Some(0)
    );
    assert_eq!(
        extract("ising-plaquette-oracle.toml", &b, &[])
            .status
            .code(),
        Some(0)
    );
    let table = dir.path().join("all.csv");
    let out = bin()
        .arg("spectrum-export")
        .arg(&a)
        .arg(b.join("spectrum.json"))
        .arg("-o")
        .arg(&table)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&table);
    assert_eq!(rows.len(), 25 + 256);
    assert_eq!(&rows[0][1], "site");
    assert_eq!(&rows[25][1], "plaquette");

    let json = dir.path().join("all.json");
    let out = bin()
        .arg("spectrum-export")
        .arg(&a)
        .arg("-o")
        .arg(&json)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v[0]["eigenvalues"].as_array().unwrap().len(), 25);

    let unknown = bin()
        .arg("spectrum-export")
        .arg(&a)
        .arg("-o")
        .arg(dir.path().join("x.txt"))
        .output()
        .unwrap();
    assert_eq!(unknown.status.code(), Some(1));
}
