//! Inner loops: gradient descent on `g(x, ·)` and on `h_σ(x, ·) = σ f + g`.
//!
//! [`inner_descend`] runs the two warm-started sequences of the penalty
//! algorithms for exactly `K` steps (optionally exiting early).
//! [`minimize_penalty`] drives a single sequence to a gradient-norm tolerance
//! and backs the value-function evaluations and certified minimizers.

use crate::error::{BilevelError, Result};
use crate::oracle::{ExactOracle, FirstOrderOracle};
use crate::problem::{check_dims, finite_val, finite_vec, project_box, BilevelProblem};
use crate::vecops;

/// Safety factor applied to the PL energy budget.
const PL_GUARD_SLACK: f64 = 2.0;

/// Gradient norms below this are treated as rounding noise by the PL guard.
const PL_GUARD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerConfig {
    pub tau: f64,
    pub k: usize,
    /// Mini-batch size; informational here, the oracle does the batching.
    pub batch: usize,
    /// Freeze a sequence once its gradient norm drops to this level.
    pub stop_grad_norm: Option<f64>,
    /// Iterate-norm cap; `None` means `1e6 (1 + ‖start‖)` per sequence.
    pub divergence_radius: Option<f64>,
    /// PL constant used to certify the descent.
    ///
    /// Exact gradient descent with step `τ ≤ 1/L` on a `μ`-PL function
    /// satisfies `Σ_{j≤k} ‖∇h(y_j)‖² ≤ ‖∇h(y₀)‖² / (μ τ)` for every `k`,
    /// since each step decreases `h` by at least `τ‖∇h‖²/2` and the total
    /// decrease is capped by `h(y₀) − h* ≤ ‖∇h(y₀)‖²/(2μ)`. Exceeding
    /// (twice) that budget proves the PL claim false at this `x`, which is how
    /// unbounded-below penalties are refused after a few steps. Ignored for
    /// noisy oracles and boxed problems.
    pub pl_guard: Option<f64>,
}

impl InnerConfig {
    pub fn new(tau: f64, k: usize) -> Self {
        Self {
            tau,
            k,
            batch: 1,
            stop_grad_norm: None,
            divergence_radius: None,
            pl_guard: None,
        }
    }

    /// Step `τ = 1 / (σ L_f + L_g)`.
    pub fn penalty_step(sigma: f64, l_f: f64, l_g: f64) -> f64 {
        1.0 / (sigma * l_f + l_g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(BilevelError::Config(format!(
                "inner step tau = {} must be positive and finite",
                self.tau
            )));
        }
        if let Some(r) = self.divergence_radius {
            if !(r > 0.0) {
                return Err(BilevelError::Config("divergence radius must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    /// `y_K`, the approximate minimizer of `h_σ(x, ·)`.
    pub y: Vec<f64>,
    /// `z_K`, the approximate minimizer of `g(x, ·)`.
    pub z: Vec<f64>,
    /// Norm of the last gradient evaluated on each sequence; `None` when `K = 0`.
    pub y_residual: Option<f64>,
    pub z_residual: Option<f64>,
    pub y_steps: usize,
    pub z_steps: usize,
    /// Oracle calls counted in samples (`B` per call).
    pub oracle_calls: u64,
}

/// Divergence bookkeeping for one descent sequence.
struct Watch {
    radius: f64,
    pl: Option<(f64, f64)>,
    budget: f64,
    spent: f64,
    seen: usize,
}

impl Watch {
    fn new(start: &[f64], cfg_radius: Option<f64>, pl_mu: Option<f64>, tau: f64) -> Self {
        Self {
            radius: cfg_radius.unwrap_or(1e6 * (1.0 + vecops::norm(start))),
            pl: pl_mu.map(|mu| (mu, tau)),
            budget: f64::INFINITY,
            spent: 0.0,
            seen: 0,
        }
    }

    /// Feeds the gradient about to be stepped along.
    fn gradient(&mut self, grad_norm: f64, context: &str) -> Result<()> {
        let Some((mu, tau)) = self.pl else {
            return Ok(());
        };
        if self.seen == 0 {
            self.budget = PL_GUARD_SLACK * grad_norm * grad_norm / (mu * tau);
        }
        self.seen += 1;
        self.spent += grad_norm * grad_norm;
        let allowance = self.budget + self.seen as f64 * PL_GUARD_FLOOR * PL_GUARD_FLOOR;
        if self.spent > allowance {
            return Err(BilevelError::Divergence {
                context: context.to_string(),
                steps: self.seen - 1,
                detail: format!(
                    "squared gradient norms summed to {:e}, beyond the PL budget {:e}; the objective is not {mu}-PL here (unbounded below?)",
                    self.spent, allowance
                ),
            });
        }
        Ok(())
    }

    fn position(&self, y: &[f64], context: &str, steps: usize) -> Result<()> {
        let n = vecops::norm(y);
        if n > self.radius {
            return Err(BilevelError::Divergence {
                context: context.to_string(),
                steps,
                detail: format!("iterate norm {n:e} exceeded radius {:e}", self.radius),
            });
        }
        Ok(())
    }
}

const Z_CONTEXT: &str = "inner descent on g";
const Y_CONTEXT: &str = "inner descent on the penalty h_sigma";

/// `K` warm-started steps of the two inner sequences.
///
/// `z ← z − τ ∇_y g(x, z)` and `y ← y − τ (σ ∇_y f(x, y) + ∇_y g(x, y))`,
/// `z` first within each step. Every gradient goes through `oracle`.
pub fn inner_descend(
    oracle: &mut dyn FirstOrderOracle,
    x: &[f64],
    y0: &[f64],
    z0: &[f64],
    sigma: f64,
    cfg: &InnerConfig,
) -> Result<InnerOutcome> {
    cfg.validate()?;
    if !(sigma > 0.0) {
        return Err(BilevelError::Config(format!(
            "penalty sigma = {sigma} must be positive"
        )));
    }
    let boxed = oracle.problem().y_box().is_some();
    check_dims(oracle.problem(), x, y0)?;
    check_dims(oracle.problem(), x, z0)?;

    let guard_mu = if oracle.is_exact() && !boxed {
        cfg.pl_guard
    } else {
        None
    };
    let mut y = y0.to_vec();
    let mut z = z0.to_vec();
    let mut y_watch = Watch::new(y0, cfg.divergence_radius, guard_mu, cfg.tau);
    let mut z_watch = Watch::new(z0, cfg.divergence_radius, guard_mu, cfg.tau);
    let mut y_res = None;
    let mut z_res = None;
    let (mut y_steps, mut z_steps) = (0usize, 0usize);
    let (mut y_done, mut z_done) = (false, false);
    let mut calls = 0u64;
    let per_call = oracle.samples_per_call();

    for _ in 0..cfg.k {
        if y_done && z_done {
            break;
        }
        if !z_done {
            let gz = oracle.grad_y_g(x, &z)?;
            calls += per_call;
            let n = vecops::norm(&gz);
            z_res = Some(n);
            if cfg.stop_grad_norm.is_some_and(|s| n <= s) {
                z_done = true;
            } else {
                z_watch.gradient(n, Z_CONTEXT)?;
                vecops::descend(&mut z, cfg.tau, &gz);
                project_box(oracle.problem(), &mut z);
                z_steps += 1;
                z_watch.position(&z, Z_CONTEXT, z_steps)?;
            }
        }
        if !y_done {
            let gy = oracle.grad_y_penalty(x, &y, sigma)?;
            calls += per_call;
            let n = vecops::norm(&gy);
            y_res = Some(n);
            if cfg.stop_grad_norm.is_some_and(|s| n <= s) {
                y_done = true;
            } else {
                y_watch.gradient(n, Y_CONTEXT)?;
                vecops::descend(&mut y, cfg.tau, &gy);
                project_box(oracle.problem(), &mut y);
                y_steps += 1;
                y_watch.position(&y, Y_CONTEXT, y_steps)?;
            }
        }
    }

    let y = finite_vec(y, "inner iterate y", x, y0)?;
    let z = finite_vec(z, "inner iterate z", x, z0)?;
    Ok(InnerOutcome {
        y,
        z,
        y_residual: y_res,
        z_residual: z_res,
        y_steps,
        z_steps,
        oracle_calls: calls,
    })
}

/// [`inner_descend`] with exact gradients.
pub fn inner_descend_exact(
    problem: &dyn BilevelProblem,
    x: &[f64],
    y0: &[f64],
    z0: &[f64],
    sigma: f64,
    cfg: &InnerConfig,
) -> Result<InnerOutcome> {
    let mut oracle = ExactOracle::new(problem);
    inner_descend(&mut oracle, x, y0, z0, sigma, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    /// Target gradient norm (projected-gradient norm on boxed problems).
    pub tol: f64,
    pub max_iters: usize,
    /// Use the PL path certificate with the problem's declared `μ`.
    pub pl_guard: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 1_000_000,
            pl_guard: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub y: Vec<f64>,
    /// `h_σ(x, y)` at the returned point (`g` when `σ = 0`).
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// `σ f + g` at `(x, y)`.
pub fn penalty_value(p: &dyn BilevelProblem, x: &[f64], y: &[f64], sigma: f64) -> f64 {
    if sigma == 0.0 {
        p.g(x, y)
    } else {
        sigma * p.f(x, y) + p.g(x, y)
    }
}

fn penalty_grad(p: &dyn BilevelProblem, x: &[f64], y: &[f64], sigma: f64) -> Vec<f64> {
    let gg = p.grad_g_y(x, y);
    if sigma == 0.0 {
        return gg;
    }
    let gf = p.grad_f_y(x, y);
    gf.iter().zip(&gg).map(|(a, b)| sigma * a + b).collect()
}

/// Gradient descent on `h_σ(x, ·)` (`σ = 0` gives `g`) until the gradient
/// norm reaches `opts.tol`, with step `1 / (σ L_f + L_g)`. Boxed problems use
/// projected steps and the projected-gradient norm.
pub fn minimize_penalty(
    p: &dyn BilevelProblem,
    x: &[f64],
    sigma: f64,
    y0: &[f64],
    opts: &MinimizeOptions,
) -> Result<Minimized> {
    check_dims(p, x, y0)?;
    if !(sigma >= 0.0) {
        return Err(BilevelError::Config(format!(
            "penalty sigma = {sigma} must be nonnegative"
        )));
    }
    let c = p.constants();
    let tau = InnerConfig::penalty_step(sigma, c.l_f, c.l_g);
    let boxed = p.y_box().is_some();
    let context = if sigma == 0.0 {
        "lower-level minimization of g"
    } else {
        "minimization of the penalty h_sigma"
    };
    let guard_mu = if opts.pl_guard && !boxed { Some(c.mu) } else { None };
    let mut y = y0.to_vec();
    project_box(p, &mut y);
    let mut watch = Watch::new(&y, None, guard_mu, tau);

    for it in 0..=opts.max_iters {
        let grad = finite_vec(penalty_grad(p, x, &y, sigma), "penalty gradient", x, &y)?;
        let mut next = y.clone();
        vecops::descend(&mut next, tau, &grad);
        project_box(p, &mut next);
        let residual = if boxed {
            vecops::dist(&next, &y) / tau
        } else {
            vecops::norm(&grad)
        };
        if residual <= opts.tol {
            let value = finite_val(penalty_value(p, x, &y, sigma), "penalty value", x, &y)?;
            return Ok(Minimized {
                y,
                value,
                residual,
                iterations: it,
            });
        }
        if it == opts.max_iters {
            return Err(BilevelError::Convergence {
                context: context.to_string(),
                iterations: it,
                residual,
                target: opts.tol,
            });
        }
        if !boxed {
            watch.gradient(residual, context)?;
        }
        y = next;
        watch.position(&y, context, it + 1)?;
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::degenerate::DegeneratePenalty;
    use crate::problems::kernel_pl::KernelPl;
    use crate::problems::quadratic_sc::QuadraticSc;

    #[test]
    fn kernel_pl_two_quadratics() {
        let p = KernelPl::new();
        let sigma = 0.25;
        let cfg = InnerConfig::new(1.0 / (0.25 * 1.0 + 1.0), 200);
        let out = inner_descend_exact(&p, &[0.0], &[5.0, 5.0], &[5.0, 5.0], sigma, &cfg).unwrap();
        // y*_σ(0) has y₁ = (x + σ)/(1 + σ) = 0.2; z*(0) has z₁ = 0; the kernel coordinate never moves.
        assert!((out.y[0] - 0.2).abs() < 1e-6);
        assert!(out.z[0].abs() < 1e-6);
        assert_eq!(out.y[1], 5.0);
        assert_eq!(out.z[1], 5.0);
        assert_eq!(out.oracle_calls, 400);
    }

    #[test]
    fn zero_steps_is_identity() {
        let p = KernelPl::new();
        let cfg = InnerConfig::new(0.5, 0);
        let out = inner_descend_exact(&p, &[0.3], &[1.0, 2.0], &[3.0, 4.0], 0.1, &cfg).unwrap();
        assert_eq!(out.y, vec![1.0, 2.0]);
        assert_eq!(out.z, vec![3.0, 4.0]);
        assert_eq!(out.oracle_calls, 0);
        assert_eq!(out.y_residual, None);
    }

    #[test]
    fn quadratic_sc_contraction_within_pl_bound() {
        let p = QuadraticSc::new();
        let c = p.constants().clone();
        let x = [0.7];
        let z0 = [2.0, -1.5];
        let d0 = crate::problem::dist_to_solution_set(&p, &x, 0.0, &z0).unwrap().powi(2);
        for k in [1usize, 5, 25] {
            let cfg = InnerConfig::new(1.0 / c.l_g, k);
            let out = inner_descend_exact(&p, &x, &z0, &z0, 1e-3, &cfg).unwrap();
            let dk = crate::problem::dist_to_solution_set(&p, &x, 0.0, &out.z)
                .unwrap()
                .powi(2);
            let bound = (1.0 - c.mu / c.l_g).powi(k as i32) * (c.l_g / c.mu) * d0;
            assert!(dk <= bound + 1e-28, "K={k}: {dk} > {bound}");
        }
    }

    #[test]
    fn deterministic_path_is_reproducible() {
        let p = KernelPl::new();
        let cfg = InnerConfig::new(0.8, 17);
        let a = inner_descend_exact(&p, &[0.4], &[0.1, 0.2], &[0.3, 0.4], 0.3, &cfg).unwrap();
        let b = inner_descend_exact(&p, &[0.4], &[0.1, 0.2], &[0.3, 0.4], 0.3, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_exit_freezes_sequences() {
        let p = KernelPl::new();
        let mut cfg = InnerConfig::new(1.0, 50);
        cfg.stop_grad_norm = Some(1e-9);
        let out = inner_descend_exact(&p, &[0.0], &[3.0, 0.0], &[3.0, 0.0], 1e-3, &cfg).unwrap();
        assert!(out.z_steps < 50);
        assert!(out.z_residual.unwrap() <= 1e-9);
        assert!(out.oracle_calls < 100);
    }

    #[test]
    fn divergence_radius_trips() {
        let p = DegeneratePenalty::new();
        let mut cfg = InnerConfig::new(1.0, 1000);
        cfg.divergence_radius = Some(3.0);
        let err = inner_descend_exact(&p, &[1.0], &[0.0, 0.0], &[0.0, 0.0], 0.1, &cfg).unwrap_err();
        assert!(matches!(err, BilevelError::Divergence { .. }));
    }

    #[test]
    fn pl_guard_catches_unbounded_penalty_quickly() {
        let p = DegeneratePenalty::new();
        let mut cfg = InnerConfig::new(1.0 / 1.1, 1000);
        cfg.pl_guard = Some(p.constants().mu);
        match inner_descend_exact(&p, &[1.0], &[0.0, 0.0], &[0.0, 0.0], 0.1, &cfg) {
            Err(BilevelError::Divergence { steps, .. }) => assert!(steps < 1000),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_config_rejected() {
        let p = KernelPl::new();
        let cfg = InnerConfig::new(0.0, 3);
        assert!(matches!(
            inner_descend_exact(&p, &[0.0], &[0.0, 0.0], &[0.0, 0.0], 0.1, &cfg),
            Err(BilevelError::Config(_))
        ));
        let cfg = InnerConfig::new(0.5, 3);
        assert!(inner_descend_exact(&p, &[0.0], &[0.0], &[0.0, 0.0], 0.1, &cfg).is_err());
        assert!(inner_descend_exact(&p, &[0.0], &[0.0, 0.0], &[0.0, 0.0], 0.0, &cfg).is_err());
    }

    #[test]
    fn minimize_reaches_tolerance() {
        let p = QuadraticSc::new();
        let m = minimize_penalty(&p, &[0.3], 0.5, &[4.0, 4.0], &MinimizeOptions::default()).unwrap();
        assert!(m.residual <= 1e-12);
        // y*_σ(x) = x e₁ / (1 + σ)
        assert!((m.y[0] - 0.2).abs() < 1e-12);
        assert!(m.y[1].abs() < 1e-12);
    }

    #[test]
    fn minimize_reports_convergence_failure() {
        let p = QuadraticSc::new();
        let opts = MinimizeOptions {
            tol: 1e-300,
            max_iters: 3,
            pl_guard: true,
        };
        assert!(matches!(
            minimize_penalty(&p, &[0.3], 0.5, &[4.0, 4.0], &opts),
            Err(BilevelError::Convergence { iterations: 3, .. })
        ));
    }
}
