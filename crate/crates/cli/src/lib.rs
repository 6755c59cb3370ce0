//! Command-line driver: reads a TOML experiment config, runs it and writes
//! `results.csv`, `manifest.json` and, where the experiment has one,
//! `report.json`.
//!
//! Exit codes: 0 all assertions passed, 1 an assertion failed, 2 invalid
//! config, 3 runtime error.

pub mod config;
pub mod experiments;
pub mod expr;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::{json, Value};

use config::{Experiment, ExperimentConfig, Problem, BUILTINS};
use experiments::{Ctx, ExperimentOutput, Table};

pub const CSV_SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub failures: Vec<String>,
    pub out_dir: PathBuf,
    pub summary: Value,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fklab", version, about = "Monte Carlo Feynman–Kac laboratory")]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, required_unless_present = "list_experiments")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Lists experiments and built-in problems.
    #[arg(long)]
    list_experiments: bool,
}

/// Parses arguments, runs, prints a summary and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if args.list_experiments {
        println!("experiments:");
        for e in Experiment::ALL {
            println!("  {:<20} {}", e.name(), e.describe());
        }
        println!("built-in problems:");
        for (name, desc) in BUILTINS {
            println!("  {name:<20} {desc}");
        }
        return 0;
    }
    let path = args.config.expect("required by clap");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return 2;
        }
    };
    let overrides = Overrides { seed: args.seed, out: args.out, workers: args.workers };
    let result = ExperimentConfig::from_toml(&text).and_then(|cfg| run_config(&cfg, &overrides));
    match result {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
            for f in &outcome.failures {
                eprintln!("FAILED: {f}");
            }
            println!("{} -> {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.out_dir.display());
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Validates and runs one experiment and writes its outputs.
pub fn run_config(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    let resolved = cfg.problem.resolve()?;
    let problem = Problem::build(&resolved)?;
    cfg.problem = resolved;
    let out_dir = overrides
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
    if overrides.workers == Some(0) {
        return Err(CliError::Schema("--workers must be positive".into()));
    }

    let ctx = Ctx { seed: cfg.seed, problem, n: &cfg.numerics, c: &cfg.checks };
    let output = match overrides.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Run(e.to_string()))?
            .install(|| experiments::run(cfg.experiment, &ctx))?,
        None => experiments::run(cfg.experiment, &ctx)?,
    };
    write_outputs(&cfg, &out_dir, output)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Run(format!("{}: {e}", path.display()))
}

fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Run(format!("{}: {e}", path.display()));
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_outputs(cfg: &ExperimentConfig, out_dir: &Path, output: ExperimentOutput) -> Result<Outcome, CliError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = vec!["results.csv".to_string()];
    write_table(&out_dir.join("results.csv"), &output.table)?;
    if let Some(report) = &output.report {
        let p = out_dir.join("report.json");
        let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Run(e.to_string()))?;
        fs::write(&p, text + "\n").map_err(io_err(&p))?;
        files.push("report.json".into());
    }
    for (name, text) in &output.extra {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(io_err(&p))?;
        files.push(name.clone());
    }
    let passed = output.failures.is_empty();
    let summary = Value::Object(output.summary);
    let manifest = json!({
        "artifact": "fklab",
        "version": env!("CARGO_PKG_VERSION"),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "config": cfg,
        "outputs": files,
        "passed": passed,
        "failures": output.failures,
        "summary": summary,
    });
    let p = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Run(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(io_err(&p))?;
    Ok(Outcome { passed, failures: output.failures, out_dir: out_dir.to_path_buf(), summary })
}
