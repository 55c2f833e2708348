//! Nonconvex PL lower level: `g = (y − x)² + 3 sin²(y − x)`, `f = ½(y − 1)² + ½x²`.
//!
//! `Y*(x) = {x}`, so `φ(x) = ½(x − 1)² + ½x²`. The PL constant of `h_σ` is not
//! available in closed form; it is certified on a grid at construction.

use nalgebra::DMatrix;

use crate::problem::{BilevelProblem, ProblemConstants};
use crate::vecops::linspace;

/// Upper end of the certified penalty range.
pub const SIGMA_BAR: f64 = 0.5;
/// Declared `μ` is this fraction of the smallest ratio seen on the grid.
pub const MU_SAFETY: f64 = 0.5;
/// Half-width of the certified window in `u = y − x`.
pub const CERT_HALF_WIDTH: f64 = 10.0;

/// Record of the grid search that produced the declared `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlCertificate {
    pub raw_min_ratio: f64,
    pub worst_x: f64,
    pub worst_sigma: f64,
    pub worst_y: f64,
    pub probes: usize,
    pub x_values: Vec<f64>,
    pub sigma_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SinSqPl {
    constants: ProblemConstants,
    certificate: PlCertificate,
}

fn g_u(u: f64) -> f64 {
    u * u + 3.0 * u.sin().powi(2)
}

fn dg_u(u: f64) -> f64 {
    2.0 * u + 3.0 * (2.0 * u).sin()
}

fn d2g_u(u: f64) -> f64 {
    2.0 + 6.0 * (2.0 * u).cos()
}

/// `h_σ(x, y)` without the `y`-independent `σx²/2` term.
fn h_reduced(x: f64, sigma: f64, y: f64) -> f64 {
    sigma * 0.5 * (y - 1.0).powi(2) + g_u(y - x)
}

fn dh(x: f64, sigma: f64, y: f64) -> f64 {
    sigma * (y - 1.0) + dg_u(y - x)
}

/// Global minimizer of the scalar `h_σ(x, ·)`: grid scan then bisection on `h'`.
pub fn global_argmin(x: f64, sigma: f64) -> f64 {
    let n = 4001;
    let grid = linspace(x - CERT_HALF_WIDTH, x + CERT_HALF_WIDTH, n);
    let step = 2.0 * CERT_HALF_WIDTH / (n - 1) as f64;
    let mut best = grid[0];
    let mut best_val = f64::INFINITY;
    for &y in &grid {
        let v = h_reduced(x, sigma, y);
        if v < best_val {
            best_val = v;
            best = y;
        }
    }
    let (mut lo, mut hi) = (best - step, best + step);
    if dh(x, sigma, lo) > 0.0 || dh(x, sigma, hi) < 0.0 {
        return best;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dh(x, sigma, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `h'(y)² / (2 (h(y) − h*))` over a grid, for each `(x, σ)` listed.
pub fn certify(x_values: &[f64], sigma_values: &[f64], grid_points: usize) -> PlCertificate {
    let mut cert = PlCertificate {
        raw_min_ratio: f64::INFINITY,
        worst_x: 0.0,
        worst_sigma: 0.0,
        worst_y: 0.0,
        probes: 0,
        x_values: x_values.to_vec(),
        sigma_values: sigma_values.to_vec(),
    };
    for &sigma in sigma_values {
        for &x in x_values {
            let ystar = global_argmin(x, sigma);
            let hstar = h_reduced(x, sigma, ystar);
            for y in linspace(x - CERT_HALF_WIDTH, x + CERT_HALF_WIDTH, grid_points) {
                let gap = h_reduced(x, sigma, y) - hstar;
                if gap <= 1e-12 {
                    continue;
                }
                cert.probes += 1;
                let r = dh(x, sigma, y).powi(2) / (2.0 * gap);
                if r < cert.raw_min_ratio {
                    cert.raw_min_ratio = r;
                    cert.worst_x = x;
                    cert.worst_sigma = sigma;
                    cert.worst_y = y;
                }
            }
        }
    }
    cert
}

impl SinSqPl {
    pub fn new() -> Self {
        let cert = certify(&linspace(-2.0, 2.0, 5), &[0.0, 0.5 * SIGMA_BAR, SIGMA_BAR], 2001);
        Self {
            constants: ProblemConstants {
                // |y − 1| ≤ 1 near the solution path for x ∈ [0, 2].
                c_f: 1.0,
                l_f: 1.0,
                l_g: 8.0,
                rho_f: 0.0,
                rho_g: 12.0,
                mu: MU_SAFETY * cert.raw_min_ratio,
                sigma_bar: SIGMA_BAR,
                m_f: 0.0,
                m_g: 0.0,
            },
            certificate: cert,
        }
    }

    pub fn certificate(&self) -> &PlCertificate {
        &self.certificate
    }
}

impl Default for SinSqPl {
    fn default() -> Self {
        Self::new()
    }
}

impl BilevelProblem for SinSqPl {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        1
    }

    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (y[0] - 1.0).powi(2) + 0.5 * x[0] * x[0]
    }

    fn grad_f_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }

    fn grad_f_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0] - 1.0]
    }

    fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        g_u(y[0] - x[0])
    }

    fn grad_g_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![-dg_u(y[0] - x[0])]
    }

    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![dg_u(y[0] - x[0])]
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn hess_g_yy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, d2g_u(y[0] - x[0])))
    }

    fn hess_g_xy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -d2g_u(y[0] - x[0])))
    }

    fn hess_f(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(2, 2))
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

    fn project_to_solution_set(&self, x: &[f64], sigma: f64, _y: &[f64]) -> Option<Vec<f64>> {
        if sigma == 0.0 {
            Some(vec![x[0]])
        } else {
            Some(vec![global_argmin(x[0], sigma)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizer_on_the_diagonal() {
        let p = SinSqPl::new();
        for x in [-1.0, 0.0, 2.0] {
            assert_eq!(p.g(&[x], &[x]), 0.0);
            assert_eq!(p.grad_g_y(&[x], &[x]), vec![0.0]);
        }
    }

    #[test]
    fn lower_level_is_nonconvex() {
        let p = SinSqPl::new();
        let h = 1e-3;
        let second = |u: f64| (p.g(&[0.0], &[u + h]) - 2.0 * p.g(&[0.0], &[u]) + p.g(&[0.0], &[u - h])) / (h * h);
        assert!(linspace(1.0, 2.0, 101).into_iter().any(|u| second(u) < 0.0));
    }

    #[test]
    fn certificate_backs_declared_mu() {
        let p = SinSqPl::new();
        let c = p.certificate();
        assert!(c.probes >= 1000);
        assert!(p.constants().mu > 0.0);
        assert!(p.constants().mu <= c.raw_min_ratio);
        // An independent, finer pass at x = 0.5 must not undercut the declared value.
        let fine = certify(&[0.5], &[0.0, SIGMA_BAR], 5001);
        assert!(fine.raw_min_ratio >= p.constants().mu);
    }

    #[test]
    fn penalized_minimizer_solves_first_order_condition() {
        for sigma in [0.1, SIGMA_BAR] {
            let y = global_argmin(0.3, sigma);
            assert!(dh(0.3, sigma, y).abs() < 1e-12);
        }
    }
}
