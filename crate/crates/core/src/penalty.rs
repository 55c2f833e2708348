//! The penalty function `h_σ = σ f + g`, the first-order hypergradient
//! estimate, and the penalized hyper-objective
//! `φ_σ(x) = (min_y h_σ(x, y) − min_y g(x, y)) / σ`.

use crate::error::{BilevelError, Result};
use crate::inner::{minimize_penalty, MinimizeOptions};
use crate::oracle::FirstOrderOracle;
use crate::problem::{check_dims, finite_val, finite_vec, BilevelProblem, PenaltySupport};

/// Refuses problems whose lower level is outside the PL class.
pub(crate) fn require_penalty_support(p: &dyn BilevelProblem) -> Result<()> {
    match p.penalty_support() {
        PenaltySupport::Admissible => Ok(()),
        PenaltySupport::Refused(why) => Err(BilevelError::Capability(format!(
            "penalty methods do not apply to this problem: {why}"
        ))),
    }
}

pub struct PenaltyObjective<'p> {
    problem: &'p dyn BilevelProblem,
    sigma: f64,
    /// Gradient-norm target for the inner solves behind [`Self::penalized_hyperobjective_value`].
    pub gstar_tolerance: f64,
    pub max_iters: usize,
}

/// `φ_σ(x)` with the evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedValue {
    pub value: f64,
    /// Upper bound on `|value − φ_σ(x)|` from the PL error bound on both solves.
    pub error_bound: f64,
    /// Approximate minimizer of `h_σ(x, ·)`.
    pub y_sigma: Vec<f64>,
    /// Approximate minimizer of `g(x, ·)`.
    pub y_star: Vec<f64>,
    /// Final gradient norms of the two solves.
    pub residual_sigma: f64,
    pub residual_star: f64,
}

impl<'p> PenaltyObjective<'p> {
    pub fn new(problem: &'p dyn BilevelProblem, sigma: f64) -> Result<Self> {
        require_penalty_support(problem)?;
        let bar = problem.constants().sigma_bar;
        if !(sigma > 0.0 && sigma <= bar) {
            return Err(BilevelError::Config(format!(
                "penalty sigma = {sigma} must lie in (0, sigma_bar = {bar}]"
            )));
        }
        Ok(Self {
            problem,
            sigma,
            gstar_tolerance: 1e-12,
            max_iters: 1_000_000,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn problem(&self) -> &'p dyn BilevelProblem {
        self.problem
    }

    /// `(σ f + g, σ ∇_y f + ∇_y g)` at `(x, y)`.
    pub fn penalty_value_grad_y(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = self.problem;
        check_dims(p, x, y)?;
        let fv = finite_val(p.f(x, y), "f", x, y)?;
        let gv = finite_val(p.g(x, y), "g", x, y)?;
        let gf = finite_vec(p.grad_f_y(x, y), "grad_f_y", x, y)?;
        let gg = finite_vec(p.grad_g_y(x, y), "grad_g_y", x, y)?;
        let grad = gf.iter().zip(&gg).map(|(a, b)| self.sigma * a + b).collect();
        Ok((self.sigma * fv + gv, grad))
    }

    /// `∇_x f(x, y_K) + (∇_x g(x, y_K) − ∇_x g(x, z_K)) / σ` from exact gradients.
    pub fn hypergradient_estimate(&self, x: &[f64], y_k: &[f64], z_k: &[f64]) -> Result<Vec<f64>> {
        let mut oracle = crate::oracle::ExactOracle::new(self.problem);
        hypergradient_from_oracle(&mut oracle, x, y_k, z_k, self.sigma)
    }

    /// `φ_σ(x)`, with both inner solves started from the origin.
    pub fn penalized_hyperobjective_value(&self, x: &[f64]) -> Result<PenalizedValue> {
        let start = vec![0.0; self.problem.dim_y()];
        self.penalized_hyperobjective_value_from(x, &start)
    }

    pub fn penalized_hyperobjective_value_from(&self, x: &[f64], y_start: &[f64]) -> Result<PenalizedValue> {
        let p = self.problem;
        let opts = MinimizeOptions {
            tol: self.gstar_tolerance,
            max_iters: self.max_iters,
            pl_guard: true,
        };
        let hs = minimize_penalty(p, x, self.sigma, y_start, &opts)?;
        let gs = minimize_penalty(p, x, 0.0, y_start, &opts)?;
        let value = (hs.value - gs.value) / self.sigma;
        let mu = p.constants().mu;
        let boxed = p.y_box().is_some();
        // On a box the residual is a projected-gradient norm; its PL bound is not
        // available, so only the rounding part is reported.
        let solve_err = if boxed {
            0.0
        } else {
            (hs.residual.powi(2) + gs.residual.powi(2)) / (2.0 * mu)
        };
        let rounding = 4.0 * f64::EPSILON * (hs.value.abs() + gs.value.abs());
        let value = finite_val(value, "penalized hyper-objective", x, &hs.y)?;
        Ok(PenalizedValue {
            value,
            error_bound: (solve_err + rounding) / self.sigma,
            y_sigma: hs.y,
            y_star: gs.y,
            residual_sigma: hs.residual,
            residual_star: gs.residual,
        })
    }
}

/// The hypergradient estimate drawn through an oracle: three calls.
pub fn hypergradient_from_oracle(
    oracle: &mut dyn FirstOrderOracle,
    x: &[f64],
    y_k: &[f64],
    z_k: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(BilevelError::Config(format!(
            "hypergradient estimate needs sigma > 0, got {sigma}"
        )));
    }
    let fx = oracle.grad_x_f(x, y_k)?;
    let gy = oracle.grad_x_g(x, y_k)?;
    let gz = oracle.grad_x_g(x, z_k)?;
    Ok(fx
        .iter()
        .zip(gy.iter().zip(&gz))
        .map(|(a, (b, c))| a + (b - c) / sigma)
        .collect())
}
