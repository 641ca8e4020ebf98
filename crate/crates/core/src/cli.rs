//! Command line front end: single runs, traces, config checks and
//! experiment matrices.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::engine::{self, EngineError};
use crate::model::{ConfigError, Flow, NodeId, Protocol, ScenarioConfig};
use crate::report::{to_csv, MetricsReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("matrix spec: {0}")]
    Matrix(String),
    #[error("run {protocol} nodes={node_count} speed={speed} seed={seed}: {source}")]
    Run {
        protocol: Protocol,
        node_count: usize,
        speed: f64,
        seed: u64,
        source: EngineError,
    },
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Matrix(_) => EXIT_CONFIG,
            CliError::Engine(EngineError::Config(_)) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_flow_count() -> usize {
    1
}

/// Sweep description, read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    /// Base scenario, relative to the matrix file.
    pub base: PathBuf,
    pub node_counts: Vec<usize>,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
    /// Fixed per-run node speeds. Defaults to the base scenario's speed range.
    #[serde(default)]
    pub speeds: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Flows per run, placed between nodes `i` and `node_count-1-i`.
    #[serde(default = "default_flow_count")]
    pub flow_count: usize,
    /// When set, overrides `flow_count` with `round(flow_fraction * node_count)`
    /// flows (at least one), so offered load grows with network size.
    #[serde(default)]
    pub flow_fraction: Option<f64>,
}

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub node_count: usize,
    pub protocol: Protocol,
    pub speed: Option<f64>,
    pub seed: u64,
}

impl MatrixSpec {
    pub fn from_toml_str(text: &str) -> Result<MatrixSpec, CliError> {
        toml::from_str(text).map_err(|e| CliError::Matrix(e.to_string()))
    }

    pub fn load(path: &FsPath) -> Result<MatrixSpec, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = MatrixSpec::from_toml_str(&text)?;
        if spec.base.is_relative() {
            if let Some(dir) = path.parent() {
                spec.base = dir.join(&spec.base);
            }
        }
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let mut empty = Vec::new();
        if self.node_counts.is_empty() {
            empty.push("node_counts");
        }
        if self.protocols.is_empty() {
            empty.push("protocols");
        }
        if self.seeds.is_empty() {
            empty.push("seeds");
        }
        if self.speeds.as_ref().is_some_and(|s| s.is_empty()) {
            empty.push("speeds");
        }
        if !empty.is_empty() {
            return Err(CliError::Matrix(format!(
                "empty sweep lists: {}",
                empty.join(", ")
            )));
        }
        if self.parallelism == 0 {
            return Err(CliError::Matrix("parallelism must be at least 1".into()));
        }
        if self.flow_count == 0 {
            return Err(CliError::Matrix("flow_count must be at least 1".into()));
        }
        if self.flow_fraction.is_some_and(|f| !(f > 0.0 && f <= 0.5)) {
            return Err(CliError::Matrix(
                "flow_fraction must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }

    /// Flows placed in a network of `node_count` nodes.
    pub fn flows_for(&self, node_count: usize) -> usize {
        match self.flow_fraction {
            Some(f) => ((f * node_count as f64).round() as usize).max(1),
            None => self.flow_count,
        }
    }

    /// Cartesian product in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let speeds: Vec<Option<f64>> = match &self.speeds {
            Some(s) => s.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &node_count in &self.node_counts {
                for &speed in &speeds {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            node_count,
                            protocol,
                            speed,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Base scenario rewritten for one cell. Flow parameters other than the
/// endpoints come from the base's first flow, or the defaults if it has none.
pub fn cell_config(base: &ScenarioConfig, cell: Cell, flow_count: usize) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.node_count = cell.node_count;
    cfg.protocol = cell.protocol;
    cfg.seed = cell.seed;
    if let Some(v) = cell.speed {
        cfg.speed_min = v;
        cfg.speed_max = v;
    }
    let template = base
        .flows
        .first()
        .cloned()
        .unwrap_or_else(|| ScenarioConfig::default().flows[0].clone());
    let n = cell.node_count;
    cfg.flows = (0..flow_count.min(n / 2))
        .map(|i| Flow {
            src: NodeId(i),
            dst: NodeId(n - 1 - i),
            ..template.clone()
        })
        .collect();
    cfg
}

/// Executes every cell on a pool of `parallelism` workers. Reports come
/// back in cell order whatever the completion order was.
pub fn run_matrix(
    spec: &MatrixSpec,
    base: &ScenarioConfig,
) -> Result<Vec<MetricsReport>, CliError> {
    spec.check()?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| CliError::Matrix(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                let cfg = cell_config(base, cell, spec.flows_for(cell.node_count));
                engine::run(&cfg)
                    .map(|o| o.report)
                    .map_err(|source| CliError::Run {
                        protocol: cell.protocol,
                        node_count: cell.node_count,
                        speed: cell.speed.unwrap_or(cfg.speed_max),
                        seed: cell.seed,
                        source,
                    })
            })
            .collect()
    })
}

#[derive(Debug, Parser)]
#[command(name = "dbmf", version, about = "MANET multipath routing simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and print its metrics row.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep and write the CSV.
    Matrix {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Run one scenario and dump the full event trace.
    Trace {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &FsPath, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_scenario(path: &FsPath, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg.validate()?)
}

fn execute(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match cmd {
        Command::Validate { scenario } => {
            load_scenario(&scenario, None)?;
            writeln!(stdout, "OK").map_err(io)?;
        }
        Command::Run {
            scenario,
            seed,
            out,
        } => {
            let cfg = load_scenario(&scenario, seed)?;
            let report = engine::run(&cfg)?.report;
            let csv = to_csv(std::slice::from_ref(&report));
            match out {
                Some(p) => write_file(&p, &csv)?,
                None => write!(stdout, "{csv}").map_err(io)?,
            }
        }
        Command::Trace {
            scenario,
            seed,
            out,
        } => {
            let cfg = load_scenario(&scenario, seed)?;
            let output = engine::run_traced(&cfg)?;
            let trace = output.trace.unwrap_or_default();
            match out {
                Some(p) => write_file(&p, &trace)?,
                None => write!(stdout, "{trace}").map_err(io)?,
            }
        }
        Command::Matrix {
            spec,
            out,
            parallelism,
        } => {
            let mut spec = MatrixSpec::load(&spec)?;
            if let Some(p) = parallelism {
                spec.parallelism = p;
            }
            spec.check()?;
            let base = ScenarioConfig::load(&spec.base)?.validate()?;
            let cells = spec.cells();
            writeln!(
                stderr,
                "running {} runs on {} workers",
                cells.len(),
                spec.parallelism
            )
            .map_err(io)?;
            let reports = run_matrix(&spec, &base)?;
            let csv = to_csv(&reports);
            match out.or(spec.out.clone()) {
                Some(p) => {
                    write_file(&p, &csv)?;
                    writeln!(stderr, "wrote {} rows to {}", reports.len(), p.display())
                        .map_err(io)?;
                }
                None => write!(stdout, "{csv}").map_err(io)?,
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and executes the command. Returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
            } else {
                let _ = write!(stdout, "{e}");
            }
            return code;
        }
    };
    match execute(args.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if let CliError::Config(ConfigError::Invalid(v))
            | CliError::Engine(EngineError::Config(ConfigError::Invalid(v))) = &e
            {
                for violation in v {
                    let _ = writeln!(stderr, "  {}: {}", violation.field, violation.constraint);
                }
            }
            e.exit_code()
        }
    }
}
