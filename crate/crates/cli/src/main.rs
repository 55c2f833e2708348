use std::path::PathBuf;
use std::process::ExitCode;

use bilevel_cli::commands::{self, AdapterChoice};
use bilevel_cli::{exit, CliError, CliResult, ExperimentConfig, RunArgs};
use bilevel_core::problems;
use bilevel_core::zerochain::CertificationReport;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bilevel",
    version,
    about = "Penalty-based first-order bilevel solvers and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run F²BA or F²BSA for every (epsilon, seed) cell and write CSV traces.
    Run(RunArgs),
    /// Certify a zero-respecting method on the (T, K) hard instance.
    CertifyHard {
        #[arg(long = "t", env = "BILEVEL_HARD_T")]
        t: usize,
        #[arg(long = "k", env = "BILEVEL_HARD_K")]
        k: usize,
        #[arg(long, value_enum, default_value = "f2ba", env = "BILEVEL_ADAPTER")]
        adapter: AdapterChoice,
        /// Also write the one-line CSV summary here.
        #[arg(long, env = "BILEVEL_OUT")]
        out: Option<PathBuf>,
    },
    /// Run at three or more epsilons and fit the oracle-call slope.
    SweepSlope(RunArgs),
    /// Gradient, hypergradient, PL and contraction checks for one problem.
    Diagnose {
        #[arg(long, env = "BILEVEL_PROBLEM")]
        problem: String,
        /// Upper-level point; defaults to the problem's start point.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = 1e-4)]
        sigma: f64,
        #[arg(long, default_value_t = 0, env = "BILEVEL_SEED")]
        seed: u64,
    },
    /// Problems known to the registry.
    ListProblems,
}

fn certify_output(report: &CertificationReport, out: Option<&PathBuf>) -> CliResult<()> {
    print!("{}", report.render());
    if let Some(path) = out {
        let text = format!("{}\n{}\n", CertificationReport::SUMMARY_HEADER, report.summary_row());
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::CertificationFailed(format!(
            "failed checks: {}",
            report.failed_checks().join(", ")
        )))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Run(args) => {
            let (cfg, suite) = ExperimentConfig::resolve(&args)?;
            let cells = commands::cmd_run(&cfg, &suite)?;
            for c in &cells {
                println!("{}", c.summary_line());
            }
            if cfg.report.slope {
                print!("{}", commands::slope_report(&cfg, &cells)?.render());
            }
            if cfg.report.diagnostics {
                print!("{}", commands::cmd_diagnose(&suite, &cfg.x0, 1e-4, cfg.seeds[0])?);
            }
            if cfg.report.certify_hard {
                let (t, k) = (cfg.report.hard_t.unwrap_or(10), cfg.report.hard_k.unwrap_or(10));
                certify_output(&commands::cmd_certify_hard(t, k, AdapterChoice::F2ba)?, None)?;
            }
            Ok(())
        }
        Cmd::CertifyHard { t, k, adapter, out } => {
            let report = commands::cmd_certify_hard(t, k, adapter)?;
            certify_output(&report, out.as_ref())
        }
        Cmd::SweepSlope(args) => {
            let (cfg, suite) = ExperimentConfig::resolve(&args)?;
            let (_, report) = commands::cmd_sweep_slope(&cfg, &suite)?;
            print!("{}", report.render());
            Ok(())
        }
        Cmd::Diagnose {
            problem,
            x,
            sigma,
            seed,
        } => {
            let suite = problems::lookup(&problem)?;
            let x = if x.is_empty() { suite.x0.clone() } else { x };
            print!("{}", commands::cmd_diagnose(&suite, &x, sigma, seed)?);
            Ok(())
        }
        Cmd::ListProblems => {
            print!("{}", commands::cmd_list_problems());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::CONFIG as u8
            } else {
                exit::OK as u8
            });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
