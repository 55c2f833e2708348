//! `f = ½(y₁ − 1)²`, `g = ½(y₁ − x)²` on `ℝ × ℝ²`.
//!
//! `g` is 1-PL but not strongly convex: `y₂` is a flat kernel direction, so
//! `Y*(x) = {(x, t)}` is a line. `h_σ` is uniformly `(1 + σ)`-PL.

use nalgebra::DMatrix;

use crate::problem::{BilevelProblem, ProblemConstants};

#[derive(Debug, Clone)]
pub struct KernelPl {
    constants: ProblemConstants,
}

impl KernelPl {
    pub fn new() -> Self {
        Self {
            constants: ProblemConstants {
                // |∂_{y₁} f| = |y₁ − 1| ≤ 1 on the box y₁ ∈ [0, 2] the runs live in.
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

    /// First coordinate of every point of `Y*_σ(x)`.
    pub fn solution_offset(x: f64, sigma: f64) -> f64 {
        (x + sigma) / (1.0 + sigma)
    }
}

impl Default for KernelPl {
    fn default() -> Self {
        Self::new()
    }
}

impl BilevelProblem for KernelPl {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        2
    }

    fn f(&self, _x: &[f64], y: &[f64]) -> f64 {
        0.5 * (y[0] - 1.0).powi(2)
    }

    fn grad_f_x(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0]
    }

    fn grad_f_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0] - 1.0, 0.0]
    }

    fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (y[0] - x[0]).powi(2)
    }

    fn grad_g_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![x[0] - y[0]]
    }

    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0] - x[0], 0.0]
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn hess_g_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]))
    }

    fn hess_g_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]))
    }

    fn hess_f(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(3, 3);
        h[(1, 1)] = 1.0;
        Some(h)
    }

    fn analytic_phi(&self, x: &[f64]) -> Option<f64> {
        Some(0.5 * (x[0] - 1.0).powi(2))
    }

    fn analytic_grad_phi(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![x[0] - 1.0])
    }

    fn analytic_phi_inf(&self) -> Option<f64> {
        Some(0.0)
    }

    fn analytic_phi_sigma(&self, x: &[f64], sigma: f64) -> Option<f64> {
        Some((x[0] - 1.0).powi(2) / (2.0 * (1.0 + sigma)))
    }

    fn analytic_grad_phi_sigma(&self, x: &[f64], sigma: f64) -> Option<Vec<f64>> {
        Some(vec![(x[0] - 1.0) / (1.0 + sigma)])
    }

    fn project_to_solution_set(&self, x: &[f64], sigma: f64, y: &[f64]) -> Option<Vec<f64>> {
        Some(vec![Self::solution_offset(x[0], sigma), y[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyObjective;

    #[test]
    fn penalty_gradient_at_origin() {
        let p = KernelPl::new();
        let obj = PenaltyObjective::new(&p, 0.5).unwrap();
        let (v, g) = obj.penalty_value_grad_y(&[0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![-0.5, 0.0]);
        assert_eq!(v, 0.25);
    }

    #[test]
    fn phi_sigma_closed_form() {
        let p = KernelPl::new();
        // ab/(a+b) with a = 1, b = 1/σ at σ = 0.25, times ½(x−1)² = ½.
        assert_eq!(p.analytic_phi_sigma(&[0.0], 0.25), Some(0.4));
        assert_eq!(p.analytic_grad_phi_sigma(&[0.0], 0.25), Some(vec![-0.8]));
    }

    #[test]
    fn solution_set_is_a_line() {
        let p = KernelPl::new();
        let proj = p.project_to_solution_set(&[0.3], 0.0, &[9.0, 7.0]).unwrap();
        assert_eq!(proj, vec![0.3, 7.0]);
        assert_eq!(p.g(&[0.3], &proj), 0.0);
    }
}
