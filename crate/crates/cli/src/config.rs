//! Experiment configuration: a TOML file, then `BILEVEL_*` environment
//! variables, then command-line flags, each layer overriding the last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bilevel_core::exec::Execution;
use bilevel_core::problems::{self, SuiteProblem};
use bilevel_core::schedule::ScheduleOverrides;
use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    F2ba,
    F2bsa,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::F2ba => "f2ba",
            Algo::F2bsa => "f2bsa",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFlags {
    /// Fit the oracle-call slope over the epsilon list after the run.
    #[serde(default)]
    pub slope: bool,
    /// Run the diagnostics suite on the problem.
    #[serde(default)]
    pub diagnostics: bool,
    /// Certify F²BA on the hard instance with `hard_t`, `hard_k`.
    #[serde(default)]
    pub certify_hard: bool,
    pub hard_t: Option<usize>,
    pub hard_k: Option<usize>,
}

/// The on-disk layout. Every field is optional so flags can fill the gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<String>,
    pub algo: Option<Algo>,
    pub epsilons: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub noise_f: Option<f64>,
    pub noise_g: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub timing: Option<bool>,
    pub sequential: Option<bool>,
    /// Plan fields by their header key (`K`, `T`, `eta`, `c_B`, ...).
    #[serde(default)]
    pub schedule: BTreeMap<String, toml::Value>,
    #[serde(default)]
    pub report: ReportFlags,
}

impl FileConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flags shared by `run` and `sweep-slope`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML experiment file; flags and environment override its fields.
    #[arg(long, env = "BILEVEL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Registry name, see `list-problems`.
    #[arg(long, env = "BILEVEL_PROBLEM")]
    pub problem: Option<String>,
    #[arg(long, value_enum, env = "BILEVEL_ALGO")]
    pub algo: Option<Algo>,
    /// Target stationarity; comma-separated for several cells.
    #[arg(long = "eps", env = "BILEVEL_EPS", value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long = "seed", env = "BILEVEL_SEED", value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Directory for the per-cell CSV traces.
    #[arg(long, env = "BILEVEL_OUT")]
    pub out: Option<PathBuf>,
    /// Schedule override `KEY=VALUE`, e.g. `--set K=20 --set c_B=0.5`.
    #[arg(long = "set", env = "BILEVEL_SET", value_delimiter = ',')]
    pub set: Vec<String>,
    /// Upper-level gradient noise `M_f`.
    #[arg(long, env = "BILEVEL_NOISE_F")]
    pub noise_f: Option<f64>,
    /// Lower-level gradient noise `M_g`.
    #[arg(long, env = "BILEVEL_NOISE_G")]
    pub noise_g: Option<f64>,
    #[arg(long, env = "BILEVEL_X0", value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Vec<f64>,
    #[arg(long, env = "BILEVEL_Y0", value_delimiter = ',', allow_negative_numbers = true)]
    pub y0: Vec<f64>,
    /// Record wall-clock milliseconds; traces are then no longer byte-reproducible.
    #[arg(long, env = "BILEVEL_TIMING")]
    pub timing: bool,
    /// Run cells one after another instead of on the thread pool.
    #[arg(long, env = "BILEVEL_SEQUENTIAL")]
    pub sequential: bool,
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: String,
    pub algo: Algo,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub overrides: ScheduleOverrides,
    /// The overrides as given, for trace headers.
    pub override_pairs: Vec<(String, String)>,
    pub noise_f: f64,
    pub noise_g: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub out: PathBuf,
    pub timing: bool,
    pub execution: Execution,
    pub report: ReportFlags,
}

fn toml_scalar(key: &str, v: &toml::Value) -> CliResult<String> {
    match v {
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:e}")),
        toml::Value::String(s) => Ok(s.clone()),
        other => Err(CliError::Config(format!(
            "schedule.{key} must be a number, got {other}"
        ))),
    }
}

fn nonneg_finite(name: &str, v: f64) -> CliResult<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} = {v} must be finite and nonnegative")))
    }
}

impl ExperimentConfig {
    /// Merges file and flags, then checks everything that can be checked
    /// without running: problem name, schedule keys, dimensions, epsilons.
    pub fn resolve(args: &RunArgs) -> CliResult<(Self, SuiteProblem)> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let problem = args
            .problem
            .clone()
            .or(file.problem)
            .ok_or_else(|| CliError::Config("no problem given (--problem or `problem = ...`)".into()))?;
        let suite = problems::lookup(&problem)?;
        let algo = args.algo.or(file.algo).unwrap_or(Algo::F2ba);
        let epsilons = if args.eps.is_empty() {
            file.epsilons.unwrap_or_default()
        } else {
            args.eps.clone()
        };
        if epsilons.is_empty() {
            return Err(CliError::Config(
                "no epsilon given (--eps or `epsilons = [...]`)".into(),
            ));
        }
        if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(CliError::Config(format!("epsilon = {e} must be positive and finite")));
        }
        for (i, e) in epsilons.iter().enumerate() {
            if epsilons[..i].contains(e) {
                return Err(CliError::Config(format!("epsilon = {e} is listed twice")));
            }
        }
        let seeds = if args.seed.is_empty() {
            file.seeds.unwrap_or_else(|| vec![0])
        } else {
            args.seed.clone()
        };
        if seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return Err(CliError::Config(format!("seed {s} is listed twice")));
            }
        }

        let mut override_pairs: Vec<(String, String)> = Vec::new();
        for (k, v) in &file.schedule {
            override_pairs.push((k.clone(), toml_scalar(k, v)?));
        }
        for s in &args.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {s:?} is not KEY=VALUE")))?;
            override_pairs.retain(|(old, _)| old != k.trim());
            override_pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut overrides = ScheduleOverrides::default();
        for (k, v) in &override_pairs {
            overrides.set(k, v)?;
        }

        let noise_f = nonneg_finite("noise_f", args.noise_f.or(file.noise_f).unwrap_or(0.0))?;
        let noise_g = nonneg_finite("noise_g", args.noise_g.or(file.noise_g).unwrap_or(0.0))?;
        if algo == Algo::F2ba && (noise_f > 0.0 || noise_g > 0.0) {
            return Err(CliError::Config(
                "f2ba uses exact gradients; noisy oracles need algo = f2bsa".into(),
            ));
        }
        let x0 = if args.x0.is_empty() {
            file.x0.unwrap_or_else(|| suite.x0.clone())
        } else {
            args.x0.clone()
        };
        let y0 = if args.y0.is_empty() {
            file.y0.unwrap_or_else(|| suite.y0.clone())
        } else {
            args.y0.clone()
        };
        let p = suite.problem.as_ref();
        if x0.len() != p.dim_x() || y0.len() != p.dim_y() {
            return Err(CliError::Config(format!(
                "start point has dims ({}, {}), {problem} needs ({}, {})",
                x0.len(),
                y0.len(),
                p.dim_x(),
                p.dim_y()
            )));
        }
        let sequential = args.sequential || file.sequential.unwrap_or(false);
        let cfg = ExperimentConfig {
            problem,
            algo,
            epsilons,
            seeds,
            overrides,
            override_pairs,
            noise_f,
            noise_g,
            x0,
            y0,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
            timing: args.timing || file.timing.unwrap_or(false),
            execution: if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel.effective()
            },
            report: file.report,
        };
        Ok((cfg, suite))
    }
}
