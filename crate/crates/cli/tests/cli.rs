use std::path::Path;
use std::process::{Command, Output};

use bilevel_cli::exit;
use bilevel_cli::trace_csv::TraceFile;

fn bilevel(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bilevel"));
    c.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("BILEVEL_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(bilevel(&[
            "run",
            "--problem",
            "kernel_pl",
            "--algo",
            "f2ba",
            "--eps",
            "1e-2",
            "--seed",
            "7",
            "--set",
            "T=500",
            "--out",
        ])
        .arg(d.path()));
        assert_eq!(out.status.code(), Some(exit::OK), "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("min est norm"));
    }
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert_eq!(fa.len(), 1);
    assert_eq!(std::fs::read(&fa[0]).unwrap(), std::fs::read(&fb[0]).unwrap());
    let t = TraceFile::read(&fa[0]).unwrap();
    assert_eq!(t.rows.len(), 500);
    assert_eq!(t.get("K"), Some("5"));
    assert_eq!(t.get("Delta_source"), Some("analytic"));
}

#[test]
fn stochastic_run_is_reproducible_across_execution_modes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, extra) in [(&a, None), (&b, Some("--sequential"))] {
        let mut c = bilevel(&[
            "run",
            "--problem",
            "kernel_pl",
            "--algo",
            "f2bsa",
            "--eps",
            "0.1,0.05",
            "--seed",
            "1,2",
            "--noise-f",
            "0.5",
            "--set",
            "T=50",
        ]);
        c.arg("--out").arg(d.path());
        if let Some(e) = extra {
            c.arg(e);
        }
        let out = run(&mut c);
        assert_eq!(out.status.code(), Some(exit::OK), "{}", text(&out.stderr));
    }
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert_eq!(fa.len(), 4);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn degenerate_penalty_exits_with_convergence_status() {
    let d = tempfile::tempdir().unwrap();
    let out = run(bilevel(&[
        "run",
        "--problem",
        "degenerate_penalty",
        "--algo",
        "f2ba",
        "--eps",
        "1e-2",
        "--out",
    ])
    .arg(d.path()));
    assert_eq!(out.status.code(), Some(exit::CONVERGENCE));
    let err = text(&out.stderr);
    assert!(err.contains("convergence") && err.contains("divergence"), "{err}");
}

#[test]
fn unknown_problem_and_bad_config_exit_with_config_status() {
    let out = run(&mut bilevel(&["run", "--problem", "nope", "--eps", "0.1"]));
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("exp.toml");
    std::fs::write(&cfg, "problem = \"kernel_pl\"\nepsilons = [0.1]\nfrobnicate = true\n").unwrap();
    let out = run(bilevel(&["run", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    assert!(text(&out.stderr).contains("frobnicate"));
    let out = run(bilevel(&["run", "--problem", "discontinuous", "--eps", "0.1", "--out"]).arg(d.path()));
    assert_eq!(out.status.code(), Some(exit::CAPABILITY));
}

#[test]
fn environment_overrides_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("exp.toml");
    std::fs::write(&cfg, "problem = \"kernel_pl\"\nepsilons = [0.1]\n[schedule]\nT = 3\n").unwrap();
    let out = run(bilevel(&["run", "--config"])
        .arg(&cfg)
        .env("BILEVEL_PROBLEM", "quadratic_sc")
        .env("BILEVEL_SET", "T=4")
        .env("BILEVEL_OUT", d.path().join("o")));
    assert_eq!(out.status.code(), Some(exit::OK), "{}", text(&out.stderr));
    let files = csv_files(&d.path().join("o"));
    assert_eq!(files.len(), 1);
    let t = TraceFile::read(&files[0]).unwrap();
    assert_eq!(t.get("problem"), Some("quadratic_sc"));
    assert_eq!(t.rows.len(), 4);
}

#[test]
fn certify_hard_pass_and_fail() {
    let out = run(&mut bilevel(&["certify-hard", "--t", "2", "--k", "2"]));
    assert_eq!(out.status.code(), Some(exit::OK));
    assert!(text(&out.stdout).contains("result         : PASS"));
    let out = run(&mut bilevel(&[
        "certify-hard",
        "--t",
        "2",
        "--k",
        "2",
        "--adapter",
        "violating",
    ]));
    assert_eq!(out.status.code(), Some(exit::FAILED));
    assert!(text(&out.stderr).contains("(iii)"));
    let out = run(&mut bilevel(&[
        "certify-hard",
        "--t",
        "2",
        "--k",
        "2",
        "--adapter",
        "leaky",
    ]));
    assert_eq!(out.status.code(), Some(exit::INSTRUMENTATION));
}

#[test]
fn sweep_slope_rejects_single_epsilon_and_fits_three() {
    let d = tempfile::tempdir().unwrap();
    let out = run(bilevel(&["sweep-slope", "--problem", "kernel_pl", "--eps", "0.1", "--out"]).arg(d.path()));
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    assert!(csv_files(d.path()).is_empty());
    let out = run(bilevel(&[
        "sweep-slope",
        "--problem",
        "kernel_pl",
        "--eps",
        "0.1,0.05,0.025",
        "--out",
    ])
    .arg(d.path()));
    assert_eq!(out.status.code(), Some(exit::OK), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    let slope: f64 = s
        .lines()
        .find_map(|l| l.strip_prefix("slope = "))
        .and_then(|v| v.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((slope - 2.0).abs() < 0.4, "{s}");
}

#[test]
fn list_and_diagnose() {
    let out = run(&mut bilevel(&["list-problems"]));
    assert_eq!(out.status.code(), Some(exit::OK));
    assert!(text(&out.stdout).contains("sin_sq_pl"));
    let out = run(&mut bilevel(&["diagnose", "--problem", "quadratic_sc", "--x", "0.5"]));
    assert_eq!(out.status.code(), Some(exit::OK));
    assert!(text(&out.stdout).contains("hypergradient pinv"));
}
