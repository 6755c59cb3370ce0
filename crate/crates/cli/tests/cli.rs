use std::path::Path;
use std::process::{Command, Output};

use fklab_cli::config::ExperimentConfig;
use fklab_cli::{run_config, CliError, Overrides};

fn fklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fklab")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const QUICK: &str = r#"
experiment = "exit-time"
seed = 3
[problem]
builtin = "interval-half"
[numerics]
n_paths = 500
[assert]
target = 0.25
abs_tol = 0.05
"#;

#[test]
fn lists_experiments_and_builtins() {
    let out = fklab(&["--list-experiments"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["exit-time", "verify-convergence", "oracle-compare", "semilinear", "stable-interval"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn passing_run_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", QUICK);
    let out_dir = dir.path().join("out");
    let out = fklab(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(csv.starts_with("x,mean,std_error,n_paths,dt,horizon,warning\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["csv_schema_version"], "1.0");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["passed"], true);
    assert_eq!(manifest["config"]["problem"]["domain"]["interval"][1], 1.0);
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &QUICK.replace("target = 0.25", "target = 0.4"));
    let out = fklab(&["--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        QUICK.replace("exit-time", "no-such-experiment"),
        QUICK.replace("interval-half", "no-such-builtin"),
        QUICK.replace("n_paths = 500", "n_paths = 500\nbogus = 1"),
        QUICK.replace("builtin = \"interval-half\"", "builtin = \"linear-heat\"\nphi = \"sin(\""),
        QUICK.replace("n_paths = 500", "n_paths = 1"),
        "experiment = \"transform-check\"\n[problem]\nbuiltin = \"linear-heat\"\n".to_string(),
        String::new(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("c{i}.toml"), text);
        let out = fklab(&["--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fklab(&["--config", "/nonexistent/config.toml"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // zero-rate potential of a reflected process diverges
    let cfg = write(
        dir.path(),
        "c.toml",
        "experiment = \"potential\"\n[problem]\nbuiltin = \"reflected-surface\"\n[numerics]\nn_paths = 10\ngrid_points = 3\n",
    );
    let out = fklab(&["--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_override_and_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(QUICK).unwrap();
    let base = Overrides { out: Some(dir.path().join("a")), ..Default::default() };
    let a = run_config(&cfg, &base).unwrap();
    let b = run_config(&cfg, &Overrides { out: Some(dir.path().join("b")), workers: Some(1), ..Default::default() })
        .unwrap();
    let c = run_config(&cfg, &Overrides { out: Some(dir.path().join("c")), seed: Some(4), ..Default::default() })
        .unwrap();
    let read = |o: &fklab_cli::Outcome| std::fs::read(o.out_dir.join("results.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(matches!(
        run_config(&cfg, &Overrides { workers: Some(0), ..base }),
        Err(CliError::Schema(_))
    ));
}

#[test]
fn transform_check_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml("experiment = \"transform-check\"\n[problem]\nbuiltin = \"quadratic-gradient\"\n")
        .unwrap();
    let o = run_config(&cfg, &Overrides { out: Some(dir.path().to_path_buf()), ..Default::default() }).unwrap();
    assert!(o.passed, "{:?}", o.failures);
    for f in ["forward.csv", "inverse.csv", "results.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn checked_in_configs_parse_and_build() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for sub in ["acceptance", "examples"] {
        let Ok(entries) = std::fs::read_dir(dir.join(sub)) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(&p).unwrap())
                .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            let resolved = cfg.problem.resolve().unwrap();
            fklab_cli::config::Problem::build(&resolved).unwrap();
            n += 1;
        }
    }
    assert!(n >= 11);
}

#[test]
fn linear_heat_convergence_report_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "experiment = \"verify-convergence\"\n[problem]\nbuiltin = \"linear-heat\"\n[numerics]\nn_paths = 500\ntimes = [0.25, 0.5]\n",
    );
    let out_dir = dir.path().join("o");
    let out = fklab(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| r["pass"] == true));
}
