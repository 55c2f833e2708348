//! Strongly convex lower level: `f = ½(x − 1)² + ½‖y‖²`, `g = ½‖y − x e₁‖²`.

use nalgebra::DMatrix;

use crate::problem::{BilevelProblem, ProblemConstants};

#[derive(Debug, Clone)]
pub struct QuadraticSc {
    constants: ProblemConstants,
}

impl QuadraticSc {
    pub fn new() -> Self {
        Self::with_box_radius(1.0)
    }

    /// `C_f = sup ‖∇_y f‖ = sup ‖y‖` over the ball of the given radius.
    pub fn with_box_radius(radius: f64) -> Self {
        Self {
            constants: ProblemConstants {
                c_f: radius,
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
}

impl Default for QuadraticSc {
    fn default() -> Self {
        Self::new()
    }
}

impl BilevelProblem for QuadraticSc {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        2
    }

    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (x[0] - 1.0).powi(2) + 0.5 * (y[0] * y[0] + y[1] * y[1])
    }

    fn grad_f_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![x[0] - 1.0]
    }

    fn grad_f_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0], y[1]]
    }

    fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * ((y[0] - x[0]).powi(2) + y[1] * y[1])
    }

    fn grad_g_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![x[0] - y[0]]
    }

    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0] - x[0], y[1]]
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn hess_g_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(2, 2))
    }

    fn hess_g_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]))
    }

    fn hess_f(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(3, 3))
    }

    fn analytic_phi(&self, x: &[f64]) -> Option<f64> {
        Some(0.5 * (x[0] - 1.0).powi(2) + 0.5 * x[0] * x[0])
    }

    fn analytic_grad_phi(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![2.0 * x[0] - 1.0])
    }

    fn analytic_phi_inf(&self) -> Option<f64> {
        Some(0.25)
    }

    fn analytic_phi_sigma(&self, x: &[f64], sigma: f64) -> Option<f64> {
        Some(0.5 * (x[0] - 1.0).powi(2) + 0.5 * x[0] * x[0] / (1.0 + sigma))
    }

    fn analytic_grad_phi_sigma(&self, x: &[f64], sigma: f64) -> Option<Vec<f64>> {
        Some(vec![x[0] - 1.0 + x[0] / (1.0 + sigma)])
    }

    fn project_to_solution_set(&self, x: &[f64], sigma: f64, _y: &[f64]) -> Option<Vec<f64>> {
        Some(vec![x[0] / (1.0 + sigma), 0.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyObjective;
    use crate::vecops::norm;

    #[test]
    fn closed_forms() {
        let p = QuadraticSc::new();
        assert_eq!(p.analytic_phi(&[0.5]), Some(0.25));
        assert_eq!(p.analytic_grad_phi(&[0.5]), Some(vec![0.0]));
        assert_eq!(p.analytic_grad_phi(&[0.0]), Some(vec![-1.0]));
    }

    #[test]
    fn penalty_gradient_vanishes_at_analytic_minimizer() {
        let p = QuadraticSc::new();
        for sigma in [1e-3, 0.1, 1.0] {
            let obj = PenaltyObjective::new(&p, sigma).unwrap();
            let y = p.project_to_solution_set(&[0.3], sigma, &[0.0, 0.0]).unwrap();
            let (_, g) = obj.penalty_value_grad_y(&[0.3], &y).unwrap();
            assert!(norm(&g) <= 1e-10);
        }
    }
}
