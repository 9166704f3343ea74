use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const REF: [&str; 6] = [
    "--set",
    "model.ell=0.5",
    "--set",
    "problem.rho_minus=0.3",
    "--set",
    "problem.rho_plus=0.7",
];

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftl-lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn rates_prints_and_writes_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &[&REF[..], &["rates"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert_eq!(stdout(&o), csv);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("a,b,a_hat,b_hat,lambda_plus,lambda_minus,bounds_ok")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let lp: f64 = row[4].parse().unwrap();
    let lm: f64 = row[5].parse().unwrap();
    assert!((lp - 2.835_703_344_524_484).abs() < 1e-12);
    assert!((lm - 0.9050691410901849).abs() < 1e-12);
    assert_eq!(row[6], "true");
}

#[test]
fn missing_right_state_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(
        dir.path(),
        &[
            "--set",
            "model.ell=0.5",
            "--set",
            "problem.rho_minus=0.3",
            "bvp",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).trim_end(), "config: rho_plus required");
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn bad_inputs_exit_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for (args, code) in [
        (vec!["--set", "problem.nope=1", "rates"], 2),
        (
            vec![
                "--set",
                "model.ell=-1",
                "--set",
                "problem.rho_minus=0.3",
                "--set",
                "problem.rho_plus=0.7",
                "rates",
            ],
            2,
        ),
        (vec!["warp"], 2),
        (
            [&REF[..], &["--set", "solver.dt=1.0", "simulate"]].concat(),
            2,
        ),
    ] {
        let o = lab(dir.path(), &args);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("config: "), "{err}");
    }
}

#[test]
fn manifest_checksums_match_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &[&REF[..], &["bvp"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let outputs = manifest.split("[outputs]\n").nth(1).unwrap();
    let mut names = Vec::new();
    for line in outputs.lines().filter(|l| !l.is_empty()) {
        let (sum, name) = line.split_once("  ").unwrap();
        let bytes = fs::read(dir.path().join(name)).unwrap();
        assert_eq!(
            Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect::<String>(),
            sum,
            "{name}"
        );
        names.push(name.to_string());
    }
    for f in [
        "bvp_sequence.csv",
        "profile.csv",
        "bvp_members.csv",
        "summary.txt",
    ] {
        assert!(names.iter().any(|n| n == f), "{f} missing from {names:?}");
    }
    assert!(manifest.contains("problem.rho_plus=0.7"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = a.path().join("run.toml");
    fs::write(
        &cfg,
        "[model]\nell = 0.5\n[problem]\nrho_minus = 0.3\nconjugate = true\n",
    )
    .unwrap();
    for d in [a.path(), b.path()] {
        let o = lab(d, &["--config", cfg.to_str().unwrap(), "periodicity"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names: Vec<_> = fs::read_dir(b.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(names.iter().any(|n| n == "periods.csv"));
    for f in names {
        assert_eq!(
            fs::read(a.path().join(&f)).unwrap(),
            fs::read(b.path().join(&f)).unwrap(),
            "{f:?}"
        );
    }
}

#[test]
fn figures_render_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lab(dir.path(), &[&REF[..], &["stability"]].concat())
        .status
        .success());
    fs::remove_file(dir.path().join("envelope.svg")).ok();
    let o = lab(dir.path(), &["figures"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("envelope.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}
