use nalgebra::{DMatrix, DVector};

use crate::error::{BilevelError, Result};
use crate::linalg::pinv_symmetric;
use crate::penalty::PenaltyObjective;
use crate::problem::{check_dims, BilevelProblem};
use crate::vecops;

/// Finite-difference hypergradient with its error budget.
#[derive(Debug, Clone, PartialEq)]
pub struct FdHypergradient {
    pub grad: Vec<f64>,
    pub sigma: f64,
    pub h_step: f64,
    /// Value-error term plus the step-halving truncation estimate.
    pub error_estimate: f64,
    /// `‖D(σ) − D(σ/2)‖`, how far the penalized gradient still is from its limit.
    pub sigma_sensitivity: f64,
}

fn central_differences(obj: &PenaltyObjective, x: &[f64], h: f64) -> Result<(Vec<f64>, f64)> {
    let mut grad = Vec::with_capacity(x.len());
    let mut value_err = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let vp = obj.penalized_hyperobjective_value(&xp)?;
        let vm = obj.penalized_hyperobjective_value(&xm)?;
        grad.push((vp.value - vm.value) / (2.0 * h));
        value_err = value_err.max((vp.error_bound + vm.error_bound) / (2.0 * h));
    }
    Ok((grad, value_err))
}

/// Central differences of `φ_σ` at `x`, a proxy for `∇φ` at small `σ`.
///
/// `sigma_probe` is clamped to `σ̄`. The run is repeated at `h/2` and at `σ/2`
/// to report the truncation and penalty-limit errors.
pub fn fd_hypergradient(
    problem: &dyn BilevelProblem,
    x: &[f64],
    sigma_probe: f64,
    h_step: f64,
) -> Result<FdHypergradient> {
    if !(h_step > 0.0) || !h_step.is_finite() {
        return Err(BilevelError::Config(format!(
            "finite-difference step must be positive, got {h_step}"
        )));
    }
    if x.len() != problem.dim_x() {
        return Err(BilevelError::dim("x", problem.dim_x(), x.len()));
    }
    let sigma = sigma_probe.min(problem.constants().sigma_bar);
    let obj = PenaltyObjective::new(problem, sigma)?;
    let (grad, value_err) = central_differences(&obj, x, h_step)?;
    let (half_h, value_err_half) = central_differences(&obj, x, 0.5 * h_step)?;
    let truncation = vecops::dist(&grad, &half_h);
    let half = PenaltyObjective::new(problem, 0.5 * sigma)?;
    let (half_sigma, _) = central_differences(&half, x, h_step)?;
    Ok(FdHypergradient {
        sigma_sensitivity: vecops::dist(&grad, &half_sigma),
        grad,
        sigma,
        h_step,
        error_estimate: value_err.max(value_err_half) + truncation,
    })
}

fn hessians(problem: &dyn BilevelProblem, x: &[f64], y: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (Some(hyy), Some(hxy)) = (problem.hess_g_yy(x, y), problem.hess_g_xy(x, y)) else {
        return Err(BilevelError::Capability(
            "problem does not provide the lower-level Hessians".into(),
        ));
    };
    let (dx, dy) = (problem.dim_x(), problem.dim_y());
    if hyy.shape() != (dy, dy) || hxy.shape() != (dx, dy) {
        return Err(BilevelError::Input(format!(
            "Hessian shapes {:?} and {:?} do not match dims ({dx}, {dy})",
            hyy.shape(),
            hxy.shape()
        )));
    }
    Ok((hyy, hxy))
}

fn require_minimizer(problem: &dyn BilevelProblem, x: &[f64], y: &[f64], tol: f64) -> Result<()> {
    let r = vecops::norm(&problem.grad_g_y(x, y));
    if !(r <= tol) {
        return Err(BilevelError::Input(format!(
            "y is not a certified lower-level minimizer: gradient norm {r:e} exceeds {tol:e}"
        )));
    }
    Ok(())
}

/// `∇_x f − ∇²_xy g (∇²_yy g)† ∇_y f` at a lower-level minimizer, with
/// eigenvalues below `μ/2` treated as kernel.
pub fn exact_hypergradient_pinv(problem: &dyn BilevelProblem, x: &[f64], y_star: &[f64]) -> Result<Vec<f64>> {
    check_dims(problem, x, y_star)?;
    let (hyy, hxy) = hessians(problem, x, y_star)?;
    require_minimizer(problem, x, y_star, 1e-10)?;
    let pinv = pinv_symmetric(&hyy, 0.5 * problem.constants().mu)?;
    let fy = DVector::from_vec(problem.grad_f_y(x, y_star));
    let fx = DVector::from_vec(problem.grad_f_x(x, y_star));
    Ok((fx - hxy * (pinv * fy)).iter().copied().collect())
}

/// The strongly convex implicit-function formula with a true inverse of
/// `∇²_yy g`. Singular Hessians are a capability error.
pub fn implicit_gradient_reference(problem: &dyn BilevelProblem, x: &[f64], y_star: &[f64]) -> Result<Vec<f64>> {
    check_dims(problem, x, y_star)?;
    let (hyy, hxy) = hessians(problem, x, y_star)?;
    require_minimizer(problem, x, y_star, 1e-10)?;
    let chol = hyy.cholesky().ok_or_else(|| {
        BilevelError::Capability("lower-level Hessian is not positive definite; use the pseudoinverse formula".into())
    })?;
    let fy = DVector::from_vec(problem.grad_f_y(x, y_star));
    let fx = DVector::from_vec(problem.grad_f_x(x, y_star));
    Ok((fx - hxy * chol.solve(&fy)).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{kernel_pl::KernelPl, quadratic_sc::QuadraticSc, sin_sq::SinSqPl};

    #[test]
    fn fd_matches_kernel_penalized_gradient() {
        let p = KernelPl::new();
        let r = fd_hypergradient(&p, &[0.3], 1e-4, 1e-3).unwrap();
        assert!((r.grad[0] - (0.3 - 1.0) / (1.0 + 1e-4)).abs() < 1e-4, "{r:?}");
        assert!(r.error_estimate < 1e-6);
        assert!(r.sigma_sensitivity < 1e-4);
    }

    #[test]
    fn fd_finds_quadratic_stationary_point() {
        // ∇φ_σ(0.5) = −σ/(2(1 + σ)), so σ must sit well below the tolerance.
        let p = QuadraticSc::new();
        let r = fd_hypergradient(&p, &[0.5], 1e-7, 1e-3).unwrap();
        assert!(r.grad[0].abs() < 1e-6, "{r:?}");
        assert!(r.sigma_sensitivity < 1e-7);
    }

    #[test]
    fn fd_on_nonconvex_pl_problem() {
        let p = SinSqPl::new();
        let r = fd_hypergradient(&p, &[0.0], 1e-5, 1e-3).unwrap();
        assert!((r.grad[0] + 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn fd_rejects_bad_step() {
        assert!(matches!(
            fd_hypergradient(&KernelPl::new(), &[0.0], 1e-5, 0.0),
            Err(BilevelError::Config(_))
        ));
    }

    #[test]
    fn pinv_ignores_kernel_offset() {
        let p = KernelPl::new();
        let a = exact_hypergradient_pinv(&p, &[0.3], &[0.3, 7.0]).unwrap();
        let b = exact_hypergradient_pinv(&p, &[0.3], &[0.3, -2.0]).unwrap();
        assert!((a[0] + 0.7).abs() < 1e-12);
        assert_eq!(a, b);
        assert!(matches!(
            exact_hypergradient_pinv(&p, &[0.3], &[0.0, 0.0]),
            Err(BilevelError::Input(_))
        ));
    }

    #[test]
    fn pinv_agrees_with_implicit_formula_when_strongly_convex() {
        let p = QuadraticSc::new();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            let y = [x, 0.0];
            let a = exact_hypergradient_pinv(&p, &[x], &y).unwrap()[0];
            let b = implicit_gradient_reference(&p, &[x], &y).unwrap()[0];
            assert!((a - b).abs() < 1e-10);
            assert!((b - (2.0 * x - 1.0)).abs() < 1e-12);
        }
        assert!(matches!(
            implicit_gradient_reference(&KernelPl::new(), &[0.0], &[0.0, 0.0]),
            Err(BilevelError::Capability(_))
        ));
    }

    #[test]
    fn missing_hessians_are_a_capability_error() {
        let p = crate::problems::discontinuous::Discontinuous::new(true);
        assert!(matches!(
            exact_hypergradient_pinv(&p, &[0.5], &[0.0]),
            Err(BilevelError::Capability(_))
        ));
    }
}
