//! `f = x·y₁`, `g = ½y₂²`: the lower level is PL but `σf + g` is unbounded below
//! in `y₁` whenever `x ≠ 0`, so the penalized hyper-objective is `−∞`.
//!
//! The unconstrained problem declares `μ = 1` as any user would from `g` alone;
//! the inner solvers' PL guard is what refuses it. The boxed variant restricts
//! `y` to `[0, 1]²`, where `φ_σ(x) = min{x, 0}`.

use nalgebra::DMatrix;

use crate::problem::{BilevelProblem, ProblemConstants};

#[derive(Debug, Clone)]
pub struct DegeneratePenalty {
    boxed: bool,
    constants: ProblemConstants,
}

impl DegeneratePenalty {
    pub fn new() -> Self {
        Self::build(false)
    }

    pub fn boxed() -> Self {
        Self::build(true)
    }

    fn build(boxed: bool) -> Self {
        Self {
            boxed,
            constants: ProblemConstants {
                // ‖∇_y f‖ = |x| ≤ 1 and the x–y₁ coupling has unit curvature.
                c_f: 1.0,
                l_f: 1.0,
                l_g: 1.0,
                rho_f: 0.0,
                rho_g: 0.0,
                mu: 1.0,
                sigma_bar: 1.0,
                m_f: 0.0,
                m_g: 0.0,
            },
        }
    }

    pub fn is_boxed(&self) -> bool {
        self.boxed
    }
}

impl Default for DegeneratePenalty {
    fn default() -> Self {
        Self::new()
    }
}

impl BilevelProblem for DegeneratePenalty {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        2
    }

    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        x[0] * y[0]
    }

    fn grad_f_x(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0]]
    }

    fn grad_f_y(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![x[0], 0.0]
    }

    fn g(&self, _x: &[f64], y: &[f64]) -> f64 {
        0.5 * y[1] * y[1]
    }

    fn grad_g_x(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0]
    }

    fn grad_g_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![0.0, y[1]]
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn hess_g_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]))
    }

    fn hess_g_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(1, 2))
    }

    fn analytic_phi_sigma(&self, x: &[f64], _sigma: f64) -> Option<f64> {
        if self.boxed {
            Some(x[0].min(0.0))
        } else if x[0] == 0.0 {
            Some(0.0)
        } else {
            Some(f64::NEG_INFINITY)
        }
    }

    fn y_box(&self) -> Option<(f64, f64)> {
        if self.boxed {
            Some((0.0, 1.0))
        } else {
            None
        }
    }
}
