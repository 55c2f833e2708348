//! F²BA and F²BSA outer loops, traces, and complexity fits.

use std::time::Instant;

use crate::error::{BilevelError, Result};
use crate::inner::{inner_descend, minimize_penalty, InnerConfig, MinimizeOptions};
use crate::oracle::{ExactOracle, FirstOrderOracle, StochasticOracle};
use crate::penalty::{hypergradient_from_oracle, require_penalty_support};
use crate::problem::{check_dims, dist_to_solution_set, BilevelProblem, ProblemConstants};
use crate::rng::{stream_id, Purpose};
use crate::schedule::{build_schedule, ScheduleOverrides, SchedulePlan};
use crate::vecops;

/// Algorithm state carried across outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// `δ_t`; only tracked by the adaptive F²BSA rule.
    pub delta: Option<f64>,
    /// Cumulative oracle samples.
    pub oracle_calls: u64,
}

/// One outer iteration, recorded before the `x` update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub est_norm: f64,
    pub analytic_norm: Option<f64>,
    pub phi_analytic: Option<f64>,
    pub k_t: usize,
    pub delta_t: Option<f64>,
    /// Cumulative oracle samples after this iteration.
    pub oracle_calls: u64,
    /// Milliseconds since the run started.
    pub wall_ms: f64,
    pub y_residual: Option<f64>,
    pub z_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// `+∞` for an empty run.
    pub min_est_norm: f64,
    pub final_est_norm: f64,
    pub min_analytic_norm: Option<f64>,
    pub final_analytic_norm: Option<f64>,
    /// Analytic gradient norm at `x_T` (the returned point).
    pub analytic_norm_at_output: Option<f64>,
    pub x_final: Vec<f64>,
    pub total_oracle_calls: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub final_state: IterateState,
    pub summary: RunSummary,
    pub plan: SchedulePlan,
}

/// What an observer sees at each outer iteration, after the inner loop.
pub struct StepView<'a> {
    pub t: usize,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub estimate: &'a [f64],
    pub k_t: usize,
}

fn validate_plan(plan: &SchedulePlan) -> Result<()> {
    if !(plan.sigma > 0.0) || !(plan.tau > 0.0) || !(plan.eta > 0.0) {
        return Err(BilevelError::Config(format!(
            "plan needs positive sigma, tau, eta (got {}, {}, {})",
            plan.sigma, plan.tau, plan.eta
        )));
    }
    Ok(())
}

/// Rewrites an inner-loop failure so it names the outer iteration and counts
/// inner steps from the start of the run.
fn at_outer(e: BilevelError, t: usize, steps_before: usize) -> BilevelError {
    match e {
        BilevelError::Divergence { context, steps, detail } => BilevelError::Divergence {
            context: format!("outer iteration {t}, {context}"),
            steps: steps_before + steps,
            detail,
        },
        BilevelError::Convergence {
            context,
            iterations,
            residual,
            target,
        } => BilevelError::Convergence {
            context: format!("outer iteration {t}, {context}"),
            iterations,
            residual,
            target,
        },
        other => other,
    }
}

/// Outer loop shared by both algorithms. `adaptive` turns on the `δ_t`/`K_t` rule.
pub fn run_with_oracle(
    oracle: &mut dyn FirstOrderOracle,
    plan: &SchedulePlan,
    x0: &[f64],
    y0: &[f64],
    adaptive: bool,
    observer: &mut dyn FnMut(&StepView),
) -> Result<RunTrace> {
    validate_plan(plan)?;
    let (analytic, mu) = {
        let p = oracle.problem();
        require_penalty_support(p)?;
        check_dims(p, x0, y0)?;
        (p.analytic_grad_phi(x0).is_some(), p.constants().mu)
    };
    let start = Instant::now();
    let b = oracle.samples_per_call();
    let guard = oracle.is_exact().then_some(mu);
    let mut st = IterateState {
        t: 0,
        x: x0.to_vec(),
        y: y0.to_vec(),
        z: y0.to_vec(),
        delta: adaptive.then_some(plan.delta0),
        oracle_calls: 0,
    };
    let mut rows = Vec::with_capacity(plan.t_outer.min(1 << 20));
    let mut inner_steps = 0usize;

    for t in 0..plan.t_outer {
        let k_t = match st.delta {
            Some(d) => plan.k_for_delta(d),
            None => plan.k,
        };
        let cfg = InnerConfig {
            tau: plan.tau,
            k: k_t,
            batch: plan.batch_eff() as usize,
            stop_grad_norm: None,
            divergence_radius: None,
            pl_guard: guard,
        };
        let out =
            inner_descend(oracle, &st.x, &st.y, &st.z, plan.sigma, &cfg).map_err(|e| at_outer(e, t, inner_steps))?;
        inner_steps += out.y_steps.max(out.z_steps);
        let est = hypergradient_from_oracle(oracle, &st.x, &out.y, &out.z, plan.sigma)?;
        st.oracle_calls += out.oracle_calls + 3 * b;
        let est_norm = vecops::norm(&est);
        if !est_norm.is_finite() {
            return Err(BilevelError::Numeric {
                what: format!("hypergradient estimate at outer iteration {t}"),
                x: st.x.clone(),
                y: out.y.clone(),
            });
        }
        let (analytic_norm, phi_analytic) = if analytic {
            let p = oracle.problem();
            (
                p.analytic_grad_phi(&st.x).map(|g| vecops::norm(&g)),
                p.analytic_phi(&st.x),
            )
        } else {
            (None, None)
        };
        observer(&StepView {
            t,
            x: &st.x,
            y: &out.y,
            z: &out.z,
            estimate: &est,
            k_t,
        });
        rows.push(TraceRow {
            t,
            x: st.x.clone(),
            est_norm,
            analytic_norm,
            phi_analytic,
            k_t,
            delta_t: st.delta,
            oracle_calls: st.oracle_calls,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            y_residual: out.y_residual,
            z_residual: out.z_residual,
        });
        let mut x_next = st.x.clone();
        vecops::descend(&mut x_next, plan.eta, &est);
        if let Some(d) = st.delta {
            let step_sq = vecops::norm_sq(&vecops::sub(&x_next, &st.x));
            st.delta = Some(plan.next_delta(d, step_sq));
        }
        st.x = x_next;
        st.y = out.y;
        st.z = out.z;
        st.t = t + 1;
    }

    let p = oracle.problem();
    let summary = RunSummary {
        min_est_norm: rows.iter().map(|r| r.est_norm).fold(f64::INFINITY, f64::min),
        final_est_norm: rows.last().map_or(f64::INFINITY, |r| r.est_norm),
        min_analytic_norm: rows.iter().filter_map(|r| r.analytic_norm).reduce(f64::min),
        final_analytic_norm: rows.last().and_then(|r| r.analytic_norm),
        analytic_norm_at_output: p.analytic_grad_phi(&st.x).map(|g| vecops::norm(&g)),
        x_final: st.x.clone(),
        total_oracle_calls: st.oracle_calls,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(RunTrace {
        rows,
        final_state: st,
        summary,
        plan: plan.clone(),
    })
}

/// Deterministic F²BA: fixed `K`, exact gradients, `z₀ = y₀`, warm starts.
pub fn run_f2ba(problem: &dyn BilevelProblem, plan: &SchedulePlan, x0: &[f64], y0: &[f64]) -> Result<RunTrace> {
    run_f2ba_with_observer(problem, plan, x0, y0, &mut |_| {})
}

pub fn run_f2ba_with_observer(
    problem: &dyn BilevelProblem,
    plan: &SchedulePlan,
    x0: &[f64],
    y0: &[f64],
    observer: &mut dyn FnMut(&StepView),
) -> Result<RunTrace> {
    let mut oracle = ExactOracle::new(problem);
    run_with_oracle(&mut oracle, plan, x0, y0, false, observer)
}

/// Stochastic F²BSA on the noise stream for `(seed, ε index 0)`.
pub fn run_f2bsa(
    problem: &dyn BilevelProblem,
    plan: &SchedulePlan,
    x0: &[f64],
    y0: &[f64],
    seed: u64,
) -> Result<RunTrace> {
    run_f2bsa_on_stream(problem, plan, x0, y0, seed, stream_id(0, Purpose::OracleNoise))
}

/// F²BSA with mini-batches of `plan.batch` (full gradients when it is 0) and
/// noise levels `plan.constants.m_f`, `m_g`.
pub fn run_f2bsa_on_stream(
    problem: &dyn BilevelProblem,
    plan: &SchedulePlan,
    x0: &[f64],
    y0: &[f64],
    seed: u64,
    stream: u64,
) -> Result<RunTrace> {
    let adaptive = plan.k_rule == crate::schedule::KRule::Adaptive;
    if plan.batch == 0 {
        let mut oracle = ExactOracle::new(problem);
        return run_with_oracle(&mut oracle, plan, x0, y0, adaptive, &mut |_| {});
    }
    let c = &plan.constants;
    let mut noisy = StochasticOracle::with_stream(problem, c.m_f, c.m_g, seed, stream)?;
    let mut oracle = noisy.minibatch(plan.batch)?;
    run_with_oracle(&mut oracle, plan, x0, y0, adaptive, &mut |_| {})
}

/// `(Δ, R)` for a start point with a note on how each was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGaps {
    pub delta_big: f64,
    pub delta_source: String,
    pub r_init: f64,
    pub r_source: String,
}

/// `Δ = φ(x₀) − inf φ` from closed forms when available (else 1), and
/// `R = dist²(y₀, Y*(x₀))` from the analytic projection, else from a long
/// pre-solve of `g(x₀, ·)` started at `y₀`.
pub fn estimate_initial_gaps(problem: &dyn BilevelProblem, x0: &[f64], y0: &[f64]) -> Result<InitialGaps> {
    check_dims(problem, x0, y0)?;
    let (delta_big, delta_source) = match (problem.analytic_phi(x0), problem.analytic_phi_inf()) {
        (Some(v), Some(inf)) => ((v - inf).max(0.0), "analytic".to_string()),
        _ => (1.0, "default (no closed-form phi)".to_string()),
    };
    let (r_init, r_source) = match dist_to_solution_set(problem, x0, 0.0, y0) {
        Some(d) => (d * d, "analytic".to_string()),
        None => {
            let opts = MinimizeOptions {
                tol: 1e-10,
                max_iters: 1_000_000,
                pl_guard: true,
            };
            let m = minimize_penalty(problem, x0, 0.0, y0, &opts)?;
            (
                vecops::dist(&m.y, y0).powi(2),
                format!("pre-solve ({} GD steps)", m.iterations),
            )
        }
    };
    Ok(InitialGaps {
        delta_big,
        delta_source,
        r_init,
        r_source,
    })
}

/// Schedule for a start point, estimating `Δ` and `R` unless overridden.
pub fn plan_for(
    problem: &dyn BilevelProblem,
    x0: &[f64],
    y0: &[f64],
    epsilon: f64,
    ov: &ScheduleOverrides,
) -> Result<SchedulePlan> {
    plan_with_constants(problem, problem.constants(), x0, y0, epsilon, ov)
}

/// [`plan_for`] with the problem's constants replaced, e.g. by
/// `constants().with_noise(m_f, m_g)` for a stochastic run.
pub fn plan_with_constants(
    problem: &dyn BilevelProblem,
    constants: &ProblemConstants,
    x0: &[f64],
    y0: &[f64],
    epsilon: f64,
    ov: &ScheduleOverrides,
) -> Result<SchedulePlan> {
    require_penalty_support(problem)?;
    let need_estimate = ov.delta_big.is_none() || ov.r_init.is_none();
    let est = if need_estimate {
        Some(estimate_initial_gaps(problem, x0, y0)?)
    } else {
        None
    };
    let pick = |o: Option<f64>, e: Option<(f64, &String)>| match (o, e) {
        (Some(v), _) => (v, "override".to_string()),
        (None, Some((v, s))) => (v, s.clone()),
        (None, None) => unreachable!("estimate computed when an override is missing"),
    };
    let (delta_big, delta_source) = pick(ov.delta_big, est.as_ref().map(|e| (e.delta_big, &e.delta_source)));
    let (r_init, r_source) = pick(ov.r_init, est.as_ref().map(|e| (e.r_init, &e.r_source)));
    let mut plan = build_schedule(constants, epsilon, delta_big, r_init, ov)?;
    plan.delta_source = delta_source;
    plan.r_source = r_source;
    Ok(plan)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(BilevelError::Input("a slope fit needs at least 2 points".into()));
    }
    if points
        .iter()
        .any(|&(x, y)| !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite())
    {
        return Err(BilevelError::Input(
            "log-log fit needs positive finite coordinates".into(),
        ));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(BilevelError::Input(
            "slope fit needs at least two distinct abscissae".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Exponent `p` in `calls ≈ C ε^{−p}`, fitted over `(ε, total calls)`.
pub fn fit_complexity_slope(traces: &[(f64, f64)]) -> Result<f64> {
    if traces.len() < 3 {
        return Err(BilevelError::Input(format!(
            "complexity fit needs at least 3 epsilon values, got {}",
            traces.len()
        )));
    }
    let inv: Vec<(f64, f64)> = traces.iter().map(|&(e, c)| (1.0 / e, c)).collect();
    loglog_slope(&inv)
}

/// Checks that the trace's cumulative calls equal `Σ (2K_t + 3)·B_eff`.
pub fn validate_oracle_accounting(trace: &RunTrace) -> Result<()> {
    let b = trace.plan.batch_eff();
    let mut expected = 0u64;
    for r in &trace.rows {
        expected += (2 * r.k_t as u64 + 3) * b;
        if r.oracle_calls != expected {
            return Err(BilevelError::Instrumentation(format!(
                "row {}: trace records {} oracle calls, accounting gives {expected}",
                r.t, r.oracle_calls
            )));
        }
    }
    Ok(())
}

/// Checks `φ(x_{t+1}) ≤ φ(x_t) + tol` along the recorded analytic values.
/// Rows without a closed-form `φ` are an input error.
pub fn validate_descent(trace: &RunTrace, tol: f64) -> Result<()> {
    let phis = trace
        .rows
        .iter()
        .map(|r| {
            r.phi_analytic
                .ok_or_else(|| BilevelError::Input(format!("row {} carries no analytic phi", r.t)))
        })
        .collect::<Result<Vec<f64>>>()?;
    for (i, w) in phis.windows(2).enumerate() {
        if !(w[1] <= w[0] + tol) {
            return Err(BilevelError::Instrumentation(format!(
                "phi rose from {:e} to {:e} at t = {}",
                w[0],
                w[1],
                trace.rows[i + 1].t
            )));
        }
    }
    Ok(())
}

/// Replays the `δ_t` recursion from the recorded iterates.
pub fn validate_delta_recursion(trace: &RunTrace) -> Result<()> {
    let rows = &trace.rows;
    for (i, r) in rows.iter().enumerate() {
        let Some(d) = r.delta_t else {
            return Err(BilevelError::Input(format!("row {} carries no delta", r.t)));
        };
        if !(d >= 0.0) {
            return Err(BilevelError::Instrumentation(format!(
                "delta_{} = {d} is negative",
                r.t
            )));
        }
        let next_x = rows.get(i + 1).map_or(&trace.final_state.x, |n| &n.x);
        let want = trace.plan.next_delta(d, vecops::norm_sq(&vecops::sub(next_x, &r.x)));
        let got = rows.get(i + 1).map_or(trace.final_state.delta, |n| n.delta_t);
        match got {
            Some(g) if (g - want).abs() <= 1e-12 * want.abs().max(1e-300) => {}
            other => {
                return Err(BilevelError::Instrumentation(format!(
                    "delta_{} = {other:?}, recursion gives {want}",
                    r.t + 1
                )))
            }
        }
    }
    Ok(())
}
