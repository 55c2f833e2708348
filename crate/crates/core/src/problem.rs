//! The bilevel problem abstraction.
//!
//! A problem is `min_x φ(x)` with `φ(x) = min { f(x, y) : y ∈ argmin_y g(x, y) }`,
//! exposed through first-order oracles for `f` and `g`. Hessians and closed forms
//! are optional and only consumed by diagnostics.

use nalgebra::DMatrix;

use crate::error::{BilevelError, Result};
use crate::vecops;

/// Regularity constants of a problem.
///
/// `mu` is the PL constant of `h_σ = σ f + g` in `y`, uniform over `0 ≤ σ ≤ sigma_bar`.
/// `m_f`, `m_g` bound the standard deviation of stochastic gradients (zero when exact).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants {
    pub c_f: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub rho_f: f64,
    pub rho_g: f64,
    pub mu: f64,
    pub sigma_bar: f64,
    pub m_f: f64,
    pub m_g: f64,
}

impl ProblemConstants {
    /// Largest smoothness constant `max{C_f, L_f, L_g, ρ_g}`.
    pub fn ell(&self) -> f64 {
        self.c_f.max(self.l_f).max(self.l_g).max(self.rho_g)
    }

    pub fn kappa(&self) -> f64 {
        self.ell() / self.mu
    }

    /// `L_g / L_f`, infinite when `f` is affine in the relevant sense.
    pub fn lg_over_lf(&self) -> f64 {
        if self.l_f == 0.0 {
            f64::INFINITY
        } else {
            self.l_g / self.l_f
        }
    }

    /// `ρ_g / ρ_f`, infinite when `f` has constant Hessian.
    pub fn rhog_over_rhof(&self) -> f64 {
        if self.rho_f == 0.0 {
            f64::INFINITY
        } else {
            self.rho_g / self.rho_f
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.m_f == 0.0 && self.m_g == 0.0
    }

    pub fn with_noise(mut self, m_f: f64, m_g: f64) -> Self {
        self.m_f = m_f;
        self.m_g = m_g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("C_f", self.c_f),
            ("L_f", self.l_f),
            ("L_g", self.l_g),
            ("rho_f", self.rho_f),
            ("rho_g", self.rho_g),
            ("mu", self.mu),
            ("sigma_bar", self.sigma_bar),
            ("M_f", self.m_f),
            ("M_g", self.m_g),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || v.is_infinite() {
                return Err(BilevelError::Config(format!(
                    "constant {name} = {v} must be finite and nonnegative"
                )));
            }
        }
        if self.mu <= 0.0 {
            return Err(BilevelError::Config("PL constant mu must be positive".into()));
        }
        if self.l_g <= 0.0 {
            return Err(BilevelError::Config("L_g must be positive".into()));
        }
        if self.sigma_bar <= 0.0 {
            return Err(BilevelError::Config("sigma_bar must be positive".into()));
        }
        Ok(())
    }
}

/// Whether the penalty route `h_σ = σ f + g` may be run on a problem at all.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltySupport {
    Admissible,
    /// The lower level is outside the PL class; the string says why.
    Refused(String),
}

/// First-order oracle bundle for a bilevel problem.
///
/// Gradients must agree with central differences of the values; the suite tests
/// check this for every built-in problem.
pub trait BilevelProblem {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;

    fn f(&self, x: &[f64], y: &[f64]) -> f64;
    fn grad_f_x(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn grad_f_y(&self, x: &[f64], y: &[f64]) -> Vec<f64>;

    fn g(&self, x: &[f64], y: &[f64]) -> f64;
    fn grad_g_x(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64>;

    fn constants(&self) -> &ProblemConstants;

    /// `∇²_yy g`, `dim_y × dim_y`.
    fn hess_g_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// `∇²_xy g`, `dim_x × dim_y`.
    fn hess_g_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Full Hessian of `f` in `(x, y)`.
    fn hess_f(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn analytic_phi(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn analytic_grad_phi(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn analytic_phi_inf(&self) -> Option<f64> {
        None
    }

    /// Closed form of the penalized hyper-objective `φ_σ`.
    fn analytic_phi_sigma(&self, _x: &[f64], _sigma: f64) -> Option<f64> {
        None
    }

    fn analytic_grad_phi_sigma(&self, _x: &[f64], _sigma: f64) -> Option<Vec<f64>> {
        None
    }

    /// Nearest point of `argmin_y h_σ(x, ·)` to `y`; `sigma = 0` gives `Y*(x)`.
    fn project_to_solution_set(&self, _x: &[f64], _sigma: f64, _y: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Uniform box `[lo, hi]^dim_y` the lower level is restricted to, if any.
    /// Boxed problems are solved by projected descent and sit outside the penalty contract.
    fn y_box(&self) -> Option<(f64, f64)> {
        None
    }

    fn penalty_support(&self) -> PenaltySupport {
        PenaltySupport::Admissible
    }
}

/// `dist(y, Y*_σ(x))` when the problem knows its solution sets.
pub fn dist_to_solution_set(p: &dyn BilevelProblem, x: &[f64], sigma: f64, y: &[f64]) -> Option<f64> {
    p.project_to_solution_set(x, sigma, y)
        .map(|proj| vecops::dist(&proj, y))
}

pub(crate) fn check_dims(p: &dyn BilevelProblem, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != p.dim_x() {
        return Err(BilevelError::dim("x", p.dim_x(), x.len()));
    }
    if y.len() != p.dim_y() {
        return Err(BilevelError::dim("y", p.dim_y(), y.len()));
    }
    Ok(())
}

pub(crate) fn finite_vec(v: Vec<f64>, what: &str, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if vecops::all_finite(&v) {
        Ok(v)
    } else {
        Err(BilevelError::Numeric {
            what: what.to_string(),
            x: x.to_vec(),
            y: y.to_vec(),
        })
    }
}

pub(crate) fn finite_val(v: f64, what: &str, x: &[f64], y: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(BilevelError::Numeric {
            what: what.to_string(),
            x: x.to_vec(),
            y: y.to_vec(),
        })
    }
}

/// Clamp `y` into the problem's box, if it has one.
pub(crate) fn project_box(p: &dyn BilevelProblem, y: &mut [f64]) {
    if let Some((lo, hi)) = p.y_box() {
        for v in y.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
}
