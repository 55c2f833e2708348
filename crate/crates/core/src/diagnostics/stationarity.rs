use nalgebra::DVector;

use crate::error::{BilevelError, Result};
use crate::inner::{minimize_penalty, penalty_value, MinimizeOptions};
use crate::linalg::pinv_symmetric;
use crate::problem::{check_dims, dist_to_solution_set, BilevelProblem};
use crate::vecops;

/// GALET stationarity residuals at `(x, y, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaletResiduals {
    /// `∇_x f + ∇²_xy g w`.
    pub r_x: Vec<f64>,
    /// `∇²_yy g (∇_y f + ∇²_yy g w)`.
    pub r_w: Vec<f64>,
    /// `g(x, y) − min g(x, ·)`, floored at 0.
    pub r_y: f64,
    /// `−(∇²_yy g)† ∇_y f`.
    pub w: Vec<f64>,
    /// Residual of the pre-solve that produced `min g(x, ·)`.
    pub gstar_residual: f64,
}

/// Residuals with the multiplier `w = −(∇²_yy g)† ∇_y f` (cutoff `μ/2`) and
/// `min g(x, ·)` from gradient descent started at `y` to `gstar_tol`.
pub fn galet_residuals(problem: &dyn BilevelProblem, x: &[f64], y: &[f64], gstar_tol: f64) -> Result<GaletResiduals> {
    check_dims(problem, x, y)?;
    let (Some(hyy), Some(hxy)) = (problem.hess_g_yy(x, y), problem.hess_g_xy(x, y)) else {
        return Err(BilevelError::Capability(
            "GALET residuals need the lower-level Hessians".into(),
        ));
    };
    let pinv = pinv_symmetric(&hyy, 0.5 * problem.constants().mu)?;
    let fy = DVector::from_vec(problem.grad_f_y(x, y));
    let fx = DVector::from_vec(problem.grad_f_x(x, y));
    let w = -(&pinv * &fy);
    let r_x = fx + &hxy * &w;
    let r_w = &hyy * (fy + &hyy * &w);
    let opts = MinimizeOptions {
        tol: gstar_tol,
        ..MinimizeOptions::default()
    };
    let gstar = minimize_penalty(problem, x, 0.0, y, &opts)?;
    let gap = penalty_value(problem, x, y, 0.0) - gstar.value;
    Ok(GaletResiduals {
        r_x: r_x.iter().copied().collect(),
        r_w: r_w.iter().copied().collect(),
        r_y: gap.max(0.0),
        w: w.iter().copied().collect(),
        gstar_residual: gstar.residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxEbReport {
    /// Smallest `ρ⁻¹‖y − y⁺‖ / dist(y, Y*_σ)` over the evaluated probes.
    pub empirical_mu: f64,
    /// `μ / (1 + 2 L_g ρ)`.
    pub predicted_mu: f64,
    pub evaluated: usize,
    /// Probes already in `Y*_σ(x)`, where the ratio is 0/0.
    pub skipped: usize,
}

impl ProxEbReport {
    pub fn meets_prediction(&self, tol: f64) -> bool {
        self.empirical_mu >= self.predicted_mu - tol
    }
}

/// `argmin_z σ f(x, z) + g(x, z) + ‖y − z‖²/(2ρ)` by gradient descent; the
/// objective is strongly convex for `ρ < 1/(2 L_g)`.
fn proximal_point(problem: &dyn BilevelProblem, x: &[f64], y: &[f64], sigma: f64, rho: f64) -> Result<Vec<f64>> {
    let c = problem.constants();
    let step = 1.0 / (sigma * c.l_f + c.l_g + 1.0 / rho);
    let mut z = y.to_vec();
    for _ in 0..1_000_000 {
        let gf = problem.grad_f_y(x, &z);
        let gg = problem.grad_g_y(x, &z);
        let g: Vec<f64> = (0..z.len())
            .map(|i| sigma * gf[i] + gg[i] + (z[i] - y[i]) / rho)
            .collect();
        if !vecops::all_finite(&g) {
            return Err(BilevelError::Numeric {
                what: "proximal subproblem gradient".into(),
                x: x.to_vec(),
                y: z,
            });
        }
        if vecops::norm(&g) <= 1e-12 {
            return Ok(z);
        }
        vecops::descend(&mut z, step, &g);
    }
    Err(BilevelError::Convergence {
        context: "proximal subproblem".into(),
        iterations: 1_000_000,
        residual: f64::NAN,
        target: 1e-12,
    })
}

/// Empirical Prox-EB constant over `(x, y)` probes, with distances to
/// `Y*_σ(x)` from the problem's analytic projection.
pub fn prox_eb_check(
    problem: &dyn BilevelProblem,
    sigma: f64,
    rho: f64,
    probes: &[(Vec<f64>, Vec<f64>)],
) -> Result<ProxEbReport> {
    let c = problem.constants();
    if !(rho > 0.0 && rho < 1.0 / (2.0 * c.l_g)) {
        return Err(BilevelError::Config(format!(
            "rho = {rho} must lie in (0, 1/(2 L_g)) = (0, {})",
            1.0 / (2.0 * c.l_g)
        )));
    }
    if !(sigma >= 0.0 && sigma <= c.sigma_bar) {
        return Err(BilevelError::Config(format!("sigma = {sigma} outside [0, sigma_bar]")));
    }
    let mut empirical = f64::INFINITY;
    let (mut evaluated, mut skipped) = (0, 0);
    for (x, y) in probes {
        check_dims(problem, x, y)?;
        let dist = dist_to_solution_set(problem, x, sigma, y).ok_or_else(|| {
            BilevelError::Capability("Prox-EB check needs an analytic solution-set projection".into())
        })?;
        if dist <= 1e-14 {
            skipped += 1;
            continue;
        }
        let plus = proximal_point(problem, x, y, sigma, rho)?;
        empirical = empirical.min(vecops::dist(y, &plus) / rho / dist);
        evaluated += 1;
    }
    Ok(ProxEbReport {
        empirical_mu: empirical,
        predicted_mu: c.mu / (1.0 + 2.0 * c.l_g * rho),
        evaluated,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{kernel_pl::KernelPl, quadratic_sc::QuadraticSc};

    fn kernel_probes() -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            for y1 in [-3.0, -0.5, 0.7, 4.0] {
                out.push((vec![x], vec![y1, 1.5]));
            }
        }
        out
    }

    #[test]
    fn galet_zero_at_quadratic_stationary_pair() {
        let p = QuadraticSc::new();
        let r = galet_residuals(&p, &[0.5], &[0.5, 0.0], 1e-12).unwrap();
        assert!(vecops::norm(&r.r_x) <= 1e-8);
        assert!(vecops::norm(&r.r_w) <= 1e-8);
        assert!(r.r_y <= 1e-8);
    }

    #[test]
    fn galet_r_y_positive_off_minimizer() {
        let p = KernelPl::new();
        let r = galet_residuals(&p, &[0.2], &[1.3, -4.0], 1e-12).unwrap();
        assert!(r.r_y > 0.0);
        assert!((r.r_y - 0.5 * 1.1f64.powi(2)).abs() < 1e-10);
        // R_x equals ∇φ at any lower-level minimizer, whatever the kernel coordinate.
        let s = galet_residuals(&p, &[0.2], &[0.2, 9.0], 1e-12).unwrap();
        assert!((s.r_x[0] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn prox_eb_kernel_meets_prediction() {
        let p = KernelPl::new();
        let r = prox_eb_check(&p, 0.1, 0.1, &kernel_probes()).unwrap();
        assert!(r.meets_prediction(1e-3), "{r:?}");
        assert!((r.empirical_mu - 1.1 / 1.11).abs() < 1e-8);
        let h = prox_eb_check(&p, 0.1, 0.05, &kernel_probes()).unwrap();
        assert!(h.empirical_mu >= r.empirical_mu - 1e-3);
    }

    #[test]
    fn prox_eb_skips_minimizers_and_checks_rho() {
        let p = KernelPl::new();
        let y = p.project_to_solution_set(&[0.3], 0.1, &[0.0, 2.0]).unwrap();
        let r = prox_eb_check(&p, 0.1, 0.1, &[(vec![0.3], y)]).unwrap();
        assert_eq!((r.evaluated, r.skipped), (0, 1));
        assert!(matches!(prox_eb_check(&p, 0.1, 0.5, &[]), Err(BilevelError::Config(_))));
    }
}
