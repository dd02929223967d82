//! `primesim`: run single scenarios or sweep matrices and write result bundles.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use primesim::metrics::{write_figdata, write_rows};
use primesim::scenario::{ScenarioError, ScenarioSpec, Violation, SCHEMA_VERSION};
use primesim::sweep::{aggregate, run_sweep, SweepMatrix};

#[derive(Parser)]
#[command(name = "primesim", version, about = "Packet-level FatTree load-balancing simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its result bundle.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long, env = "PRIMESIM_SEED")]
        seed: Option<u64>,
        /// Output directory; defaults to $PRIMESIM_OUT/<scenario stem>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulated-time limit in seconds.
        #[arg(long)]
        deadline: Option<f64>,
    },
    /// Run every cell of a sweep matrix.
    Sweep {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

/// Machine-readable failure, printed as one JSON line on stderr.
#[derive(Debug, Serialize)]
struct Failure {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    residuals: Vec<(u32, u32)>,
    #[serde(skip)]
    code: u8,
}

impl Failure {
    fn new(error: &'static str, message: impl ToString, code: u8) -> Self {
        Self {
            error,
            message: message.to_string(),
            field: None,
            violations: Vec::new(),
            residuals: Vec::new(),
            code,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display()), 1)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Parse { path, message } => Self {
                field: Some(path.clone()),
                ..Self::new("invalid_config", format!("{path}: {message}"), 2)
            },
            ScenarioError::Invalid(v) => Self {
                violations: v.clone(),
                ..Self::new("invalid_config", ScenarioError::Invalid(v), 2)
            },
            ScenarioError::Run(e) => Self::new("run", e, 1),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    input_path: String,
    input_sha256: String,
    seed: Option<u64>,
    primesim_version: &'static str,
    schema_version: u32,
    out_dir: String,
    status: &'static str,
    duration_s: Option<f64>,
}

impl Manifest {
    fn write(&self, dir: &Path) -> Result<(), Failure> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::io(&path, e))
    }
}

fn read_input(path: &Path) -> Result<(String, String), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Ok((text, hash))
}

fn out_dir(out: Option<PathBuf>, input: &Path) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os("PRIMESIM_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from);
        root.join(input.file_stem().unwrap_or_default())
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: Option<PathBuf>, deadline: Option<f64>) -> Result<(), Failure> {
    let (text, hash) = read_input(scenario)?;
    let mut spec = ScenarioSpec::from_json(&text)?;
    if let Some(secs) = deadline {
        if !(secs.is_finite() && secs > 0.0) {
            return Err(Failure {
                field: Some("deadline".into()),
                ..Failure::new("invalid_config", "deadline must be a positive number of seconds", 2)
            });
        }
        spec.deadline_ns = Some((secs * 1e9).round() as u64);
    }
    spec.validate()?;
    let dir = out_dir(out, scenario);
    create_dir(&dir)?;
    let mut manifest = Manifest {
        command: "run",
        input_path: scenario.display().to_string(),
        input_sha256: hash,
        seed: Some(seed.unwrap_or(spec.seed)),
        primesim_version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        out_dir: dir.display().to_string(),
        status: "running",
        duration_s: None,
    };
    manifest.write(&dir)?;
    let t0 = Instant::now();
    let output = spec.run(seed)?;
    output.write_dir(&dir).map_err(|e| Failure::new("io", e, 1))?;
    let summary = &output.summary;
    manifest.status = if summary.complete { "complete" } else { "incomplete" };
    manifest.duration_s = Some(t0.elapsed().as_secs_f64());
    manifest.write(&dir)?;
    if !summary.complete {
        let deadline_ns = spec.deadline_ns.unwrap_or(1_000_000_000);
        let (kind, msg) = if summary.end_ns >= deadline_ns {
            ("deadline_exceeded", format!("simulated time reached the {deadline_ns} ns deadline"))
        } else {
            ("incomplete", "event queue drained with flows unfinished".to_string())
        };
        return Err(Failure {
            residuals: summary.residuals(),
            ..Failure::new(kind, msg, 3)
        });
    }
    let row = summary.summary_row();
    println!("{}", serde_json::to_string(&row).expect("row serializes"));
    Ok(())
}

fn cmd_sweep(matrix_path: &Path, jobs: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let (text, hash) = read_input(matrix_path)?;
    let matrix = SweepMatrix::from_json(&text)?;
    let cells = matrix.cells()?;
    for c in &cells {
        matrix.cell_spec(c).validate()?;
    }
    let dir = out_dir(out, matrix_path);
    create_dir(&dir)?;
    let mut manifest = Manifest {
        command: "sweep",
        input_path: matrix_path.display().to_string(),
        input_sha256: hash,
        seed: None,
        primesim_version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        out_dir: dir.display().to_string(),
        status: "running",
        duration_s: None,
    };
    manifest.write(&dir)?;
    let t0 = Instant::now();
    let rows = run_sweep(&matrix, jobs)?;
    let csv = dir.join("summary.csv");
    write_rows(&csv, &rows).map_err(|e| Failure::new("io", e, 1))?;
    write_figdata(&dir.join("figdata"), "ratio", &aggregate(&rows)).map_err(|e| Failure::new("io", e, 1))?;
    let failed = rows.iter().filter(|r| !r.complete).count();
    manifest.status = if failed == 0 { "complete" } else { "partial" };
    manifest.duration_s = Some(t0.elapsed().as_secs_f64());
    manifest.write(&dir)?;
    if failed > 0 {
        return Err(Failure::new(
            "sweep_cells_failed",
            format!("{failed} of {} cells failed; see summary.csv", rows.len()),
            3,
        ));
    }
    println!("{}", serde_json::json!({ "cells": rows.len(), "out": dir.display().to_string() }));
    Ok(())
}

fn cmd_validate(scenario: &Path) -> Result<(), Failure> {
    let (text, _) = read_input(scenario)?;
    let spec = ScenarioSpec::from_json(&text)?;
    spec.validate()?;
    println!("{}", serde_json::json!({ "valid": true, "name": spec.name }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            deadline,
        } => cmd_run(&scenario, seed, out, deadline),
        Cmd::Sweep { matrix, jobs, out } => cmd_sweep(&matrix, jobs, out),
        Cmd::Validate { scenario } => cmd_validate(&scenario),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).expect("failure serializes"));
            ExitCode::from(f.code)
        }
    }
}
