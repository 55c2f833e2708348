use std::fmt::Write as _;
use std::path::PathBuf;

use bilevel_core::diagnostics::{
    contraction_check, exact_hypergradient_pinv, fd_hypergradient, gradient_check, hessian_eigen_check,
    penalty_gap_curve, pl_ratio_certificate, ProbeRegion,
};
use bilevel_core::drivers::{
    fit_complexity_slope, loglog_slope, plan_with_constants, run_f2ba, run_f2bsa_on_stream, RunSummary,
};
use bilevel_core::exec::map_cells;
use bilevel_core::problems::{self, hard_instance::HardInstanceSpec, SuiteProblem};
use bilevel_core::rng::{stream_id, substream, Purpose};
use bilevel_core::schedule::SchedulePlan;
use bilevel_core::zerochain::{run_zero_respecting, CertificationReport, F2baAdapter, LeakyAdapter, ViolatingAdapter};
use bilevel_core::{BilevelError, PenaltySupport};
use clap::ValueEnum;
use rand::Rng;

use crate::config::{Algo, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::trace_csv::{self, reals};

/// One finished `(epsilon, seed)` cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub eps_index: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub path: PathBuf,
    pub plan: SchedulePlan,
    pub summary: RunSummary,
}

impl CellOutcome {
    /// Smallest analytic gradient norm, falling back to the estimate.
    pub fn judged_norm(&self) -> f64 {
        self.summary.min_analytic_norm.unwrap_or(self.summary.min_est_norm)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "eps = {:e}, seed = {}: min est norm = {:.6e}, min analytic norm = {}, oracle calls = {}, trace = {}",
            self.epsilon,
            self.seed,
            self.summary.min_est_norm,
            self.summary
                .min_analytic_norm
                .map_or("n/a".into(), |v| format!("{v:.6e}")),
            self.summary.total_oracle_calls,
            self.path.display()
        )
    }
}

fn file_stem(problem: &str) -> String {
    problem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect()
}

fn run_cell(cfg: &ExperimentConfig, suite: &SuiteProblem, eps_index: usize, seed: u64) -> CliResult<CellOutcome> {
    let epsilon = cfg.epsilons[eps_index];
    let p = suite.problem.as_ref();
    let constants = p.constants().clone().with_noise(cfg.noise_f, cfg.noise_g);
    let plan = plan_with_constants(p, &constants, &cfg.x0, &cfg.y0, epsilon, &cfg.overrides)?;
    let stream = stream_id(eps_index, Purpose::OracleNoise);
    let trace = match cfg.algo {
        Algo::F2ba => run_f2ba(p, &plan, &cfg.x0, &cfg.y0)?,
        Algo::F2bsa => run_f2bsa_on_stream(p, &plan, &cfg.x0, &cfg.y0, seed, stream)?,
    };
    let mut header = vec![
        ("problem".to_string(), cfg.problem.clone()),
        ("algo".into(), cfg.algo.as_str().into()),
        ("seed".into(), seed.to_string()),
        ("epsilon_index".into(), eps_index.to_string()),
        ("noise_stream".into(), stream.to_string()),
        ("x0".into(), reals(&cfg.x0)),
        ("y0".into(), reals(&cfg.y0)),
    ];
    for (k, v) in &cfg.override_pairs {
        header.push((format!("override.{k}"), v.clone()));
    }
    let path = cfg.out.join(format!(
        "{}_{}_eps{:e}_seed{seed}.csv",
        file_stem(&cfg.problem),
        cfg.algo.as_str(),
        epsilon
    ));
    trace_csv::write(&path, &header, &trace, cfg.timing)?;
    Ok(CellOutcome {
        eps_index,
        epsilon,
        seed,
        path,
        plan,
        summary: trace.summary,
    })
}

/// Runs every `(epsilon, seed)` cell and writes one trace per cell. Cells that
/// succeed keep their files; the first failure in cell order is returned.
pub fn cmd_run(cfg: &ExperimentConfig, suite: &SuiteProblem) -> CliResult<Vec<CellOutcome>> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let cells: Vec<(usize, u64)> = (0..cfg.epsilons.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = map_cells(cfg.execution, &cells, |_, &(i, seed)| {
        run_cell(cfg, suite, i, seed).map_err(|e| CliError::Cell {
            eps: cfg.epsilons[i],
            seed,
            source: Box::new(e),
        })
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRow {
    pub epsilon: f64,
    pub mean_calls: f64,
    pub min_calls: u64,
    pub max_calls: u64,
    /// Seeds whose judged gradient norm reached `epsilon`.
    pub reached: usize,
    pub seeds: usize,
    pub mean_judged_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeReport {
    pub rows: Vec<SlopeRow>,
    /// Fit of mean calls against `1/ε`.
    pub slope: f64,
    /// Per-seed fits, for the replication band.
    pub per_seed: Vec<f64>,
    /// Mean ± 2 standard errors of the per-seed slopes (absent with one seed).
    pub band: Option<(f64, f64)>,
}

impl SlopeReport {
    pub fn render(&self) -> String {
        let mut s = String::from("epsilon,mean_oracle_calls,min_calls,max_calls,reached,seeds,mean_min_grad_norm\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:e},{:.6e},{},{},{},{},{:.6e}",
                r.epsilon, r.mean_calls, r.min_calls, r.max_calls, r.reached, r.seeds, r.mean_judged_norm
            );
        }
        let _ = write!(s, "slope = {:.4}", self.slope);
        if let Some((lo, hi)) = self.band {
            let _ = write!(s, " (seed band {lo:.4} .. {hi:.4})");
        }
        s.push('\n');
        s
    }
}

/// Fits the total-oracle-call slope over the epsilon list.
pub fn slope_report(cfg: &ExperimentConfig, cells: &[CellOutcome]) -> CliResult<SlopeReport> {
    let mut distinct = cfg.epsilons.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CliError::Config(format!(
            "a slope fit needs at least 3 distinct epsilons, got {}",
            distinct.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, &epsilon) in cfg.epsilons.iter().enumerate() {
        let mine: Vec<&CellOutcome> = cells.iter().filter(|c| c.eps_index == i).collect();
        let calls: Vec<u64> = mine.iter().map(|c| c.summary.total_oracle_calls).collect();
        rows.push(SlopeRow {
            epsilon,
            mean_calls: calls.iter().sum::<u64>() as f64 / calls.len() as f64,
            min_calls: calls.iter().copied().min().unwrap_or(0),
            max_calls: calls.iter().copied().max().unwrap_or(0),
            reached: mine.iter().filter(|c| c.judged_norm() <= epsilon).count(),
            seeds: mine.len(),
            mean_judged_norm: mine.iter().map(|c| c.judged_norm()).sum::<f64>() / mine.len() as f64,
        });
    }
    let slope = fit_complexity_slope(&rows.iter().map(|r| (r.epsilon, r.mean_calls)).collect::<Vec<_>>())?;
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.seed == seed)
                .map(|c| (c.epsilon, c.summary.total_oracle_calls as f64))
                .collect();
            fit_complexity_slope(&pts)
        })
        .collect::<bilevel_core::Result<Vec<f64>>>()?;
    let band = (per_seed.len() > 1).then(|| {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let var = per_seed.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let half = 2.0 * (var / n).sqrt();
        (mean - half, mean + half)
    });
    Ok(SlopeReport {
        rows,
        slope,
        per_seed,
        band,
    })
}

/// Checks the epsilon count before spending any time on runs.
pub fn cmd_sweep_slope(cfg: &ExperimentConfig, suite: &SuiteProblem) -> CliResult<(Vec<CellOutcome>, SlopeReport)> {
    let mut distinct = cfg.epsilons.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CliError::Config(format!(
            "sweep-slope needs at least 3 distinct epsilons, got {}",
            distinct.len()
        )));
    }
    let cells = cmd_run(cfg, suite)?;
    let report = slope_report(cfg, &cells)?;
    Ok((cells, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdapterChoice {
    /// F²BA with the theory schedule.
    F2ba,
    /// Seeds one tail coordinate; must fail check (iii).
    Violating,
    /// Answers some calls from an untracked copy; must raise an instrumentation error.
    Leaky,
}

/// Certifies an adapter on the `(T, K)` hard instance. A failed check is an error.
pub fn cmd_certify_hard(t: usize, k: usize, adapter: AdapterChoice) -> CliResult<CertificationReport> {
    if t == 0 || k == 0 {
        return Err(CliError::Config(format!(
            "certify-hard needs T, K >= 1, got T = {t}, K = {k}"
        )));
    }
    let spec = HardInstanceSpec::new(t, k)?;
    let report = match adapter {
        AdapterChoice::F2ba => run_zero_respecting(&F2baAdapter, spec)?,
        AdapterChoice::Violating => run_zero_respecting(&ViolatingAdapter, spec)?,
        AdapterChoice::Leaky => run_zero_respecting(&LeakyAdapter, spec)?,
    };
    Ok(report)
}

fn line(s: &mut String, name: &str, r: CliResult<String>) {
    match r {
        Ok(v) => {
            let _ = writeln!(s, "{name:<24}: {v}");
        }
        Err(e) => {
            let _ = writeln!(s, "{name:<24}: skipped ({}: {e})", e.category());
        }
    }
}

fn need<T>(v: Option<T>, what: &str) -> CliResult<T> {
    v.ok_or_else(|| BilevelError::Capability(format!("problem has no {what}")).into())
}

/// Runs the diagnostic checks that apply to the problem at `x`. Checks the
/// problem cannot support are listed as skipped with the reason.
pub fn cmd_diagnose(suite: &SuiteProblem, x: &[f64], sigma: f64, seed: u64) -> CliResult<String> {
    let p = suite.problem.as_ref();
    if x.len() != p.dim_x() {
        return Err(CliError::Config(format!(
            "x has length {}, {} needs {}",
            x.len(),
            suite.name,
            p.dim_x()
        )));
    }
    let y0 = &suite.y0;
    let mut s = String::new();
    let _ = writeln!(s, "problem                 : {} ({})", suite.name, suite.regime);
    let _ = writeln!(s, "notes                   : {}", suite.notes);
    let _ = writeln!(s, "x                       : {x:?}");
    let support = match p.penalty_support() {
        PenaltySupport::Admissible => "admissible".to_string(),
        PenaltySupport::Refused(why) => format!("refused: {why}"),
    };
    let _ = writeln!(s, "penalty methods         : {support}");

    line(
        &mut s,
        "gradient check",
        (|| {
            let mut rng = substream(seed, stream_id(0, Purpose::Probes));
            let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
                .map(|_| {
                    let xs = x.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
                    let ys = y0.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
                    (xs, ys)
                })
                .collect();
            let g = gradient_check(p, &pts, 1e-5)?;
            let c = p.constants();
            Ok(format!(
                "max rel err {:.3e}; y-smoothness L_f ~ {:.4} (declared {}), L_g ~ {:.4} (declared {})",
                g.max_rel_err, g.l_f_estimate, c.l_f, g.l_g_estimate, c.l_g
            ))
        })(),
    );

    let y_star = p.project_to_solution_set(x, 0.0, y0);
    line(
        &mut s,
        "hypergradient analytic",
        need(p.analytic_grad_phi(x), "closed-form gradient").map(|g| format!("{g:?}")),
    );
    line(
        &mut s,
        "hypergradient pinv",
        (|| {
            let y = need(y_star.clone(), "analytic solution set")?;
            Ok(format!("{:?}", exact_hypergradient_pinv(p, x, &y)?))
        })(),
    );
    line(
        &mut s,
        "hypergradient fd",
        (|| {
            let fd = fd_hypergradient(p, x, sigma, 1e-4)?;
            Ok(format!(
                "{:?} (sigma {:e}, error estimate {:.2e}, sigma sensitivity {:.2e})",
                fd.grad, fd.sigma, fd.error_estimate, fd.sigma_sensitivity
            ))
        })(),
    );
    line(
        &mut s,
        "penalty gap slope",
        (|| {
            let sigmas: Vec<f64> = (0..6)
                .map(|i| p.constants().sigma_bar.min(0.1) / 2f64.powi(i))
                .collect();
            let curve = penalty_gap_curve(p, x, &sigmas)?;
            let pts: Vec<(f64, f64)> = curve.iter().copied().filter(|&(_, gap)| gap > 0.0).collect();
            Ok(format!(
                "{:.4} over sigma in [{:e}, {:e}]",
                loglog_slope(&pts)?,
                sigmas[5],
                sigmas[0]
            ))
        })(),
    );
    line(
        &mut s,
        "contraction K=1,5,25",
        (|| {
            let rows = contraction_check(p, x, y0, &[1, 5, 25])?;
            Ok(rows
                .iter()
                .map(|r| {
                    format!(
                        "K={} {:.3e} <= {:.3e} {}",
                        r.k,
                        r.dist_k_sq,
                        r.bound,
                        if r.holds() { "ok" } else { "VIOLATED" }
                    )
                })
                .collect::<Vec<_>>()
                .join("; "))
        })(),
    );
    line(
        &mut s,
        "PL ratio",
        (|| {
            let region = ProbeRegion {
                xs: vec![x.to_vec()],
                y_lo: y0.iter().map(|v| v - 2.0).collect(),
                y_hi: y0.iter().map(|v| v + 2.0).collect(),
                seed,
            };
            let r = pl_ratio_certificate(p, sigma.min(p.constants().sigma_bar), 400, &region)?;
            Ok(format!(
                "min {:.4e} over {} probes (declared mu {})",
                r.min_ratio,
                r.evaluated,
                p.constants().mu
            ))
        })(),
    );
    line(
        &mut s,
        "Hessian eigenvalue",
        (|| {
            let y = need(y_star.clone(), "analytic solution set")?;
            let lam = hessian_eigen_check(p, x, &y, 1e-10)?;
            Ok(match lam {
                Some(l) => format!("smallest nonzero {l:.6e} (declared mu {})", p.constants().mu),
                None => "all eigenvalues zero".into(),
            })
        })(),
    );
    Ok(s)
}

pub fn cmd_list_problems() -> String {
    let mut s = String::from("name                       regime              dims  description\n");
    for (name, regime, about) in problems::list() {
        let dims = problems::lookup(name)
            .map(|p| format!("{}x{}", p.problem.dim_x(), p.problem.dim_y()))
            .unwrap_or_else(|_| "?".into());
        let _ = writeln!(s, "{name:<26} {:<19} {dims:<5} {about}", regime.as_str());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunArgs;

    fn resolve(a: RunArgs) -> (ExperimentConfig, SuiteProblem) {
        ExperimentConfig::resolve(&a).unwrap()
    }

    #[test]
    fn run_writes_one_file_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, suite) = resolve(RunArgs {
            problem: Some("kernel_pl".into()),
            algo: Some(Algo::F2bsa),
            eps: vec![0.1, 0.05],
            seed: vec![1, 2, 3],
            noise_f: Some(0.2),
            set: vec!["T=20".into()],
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        });
        let cells = cmd_run(&cfg, &suite).unwrap();
        assert_eq!(cells.len(), 6);
        for c in &cells {
            let t = trace_csv::TraceFile::read(&c.path).unwrap();
            assert_eq!(t.rows.len(), 20);
            assert_eq!(t.plan().unwrap(), c.plan);
            assert_eq!(t.get("seed"), Some(c.seed.to_string().as_str()));
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 6);
    }

    #[test]
    fn sweep_needs_three_epsilons() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, suite) = resolve(RunArgs {
            problem: Some("kernel_pl".into()),
            eps: vec![0.1, 0.05],
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        });
        assert!(matches!(cmd_sweep_slope(&cfg, &suite), Err(CliError::Config(_))));
        assert_eq!(std::fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
    }

    #[test]
    fn certification_outcomes() {
        assert!(cmd_certify_hard(2, 2, AdapterChoice::F2ba).unwrap().passed());
        let bad = cmd_certify_hard(2, 2, AdapterChoice::Violating).unwrap();
        assert!(bad.failed_checks().contains(&"(iii) support growth <= 1"));
        assert_eq!(
            cmd_certify_hard(2, 2, AdapterChoice::Leaky).unwrap_err().exit_code(),
            crate::error::exit::INSTRUMENTATION
        );
        assert!(matches!(
            cmd_certify_hard(0, 2, AdapterChoice::F2ba),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn diagnose_reports_and_skips() {
        let k = problems::make_kernel_pl();
        let r = cmd_diagnose(&k, &[0.3], 1e-4, 0).unwrap();
        assert!(r.contains("hypergradient pinv"));
        assert!(!r.contains("skipped"), "{r}");
        let d = problems::make_discontinuous_example(false);
        let r = cmd_diagnose(&d, &[0.3], 1e-4, 0).unwrap();
        assert!(r.contains("refused"));
        assert!(r.contains("skipped (capability"), "{r}");
    }

    #[test]
    fn registry_listing_names_every_problem() {
        let s = cmd_list_problems();
        for (name, _, _) in problems::list() {
            assert!(s.contains(name));
        }
    }
}
