use crate::error::{BilevelError, Result};
use crate::inner::{minimize_penalty, MinimizeOptions};
use crate::problem::BilevelProblem;
use crate::vecops::linspace;

fn scalar_y(problem: &dyn BilevelProblem, x: &[f64]) -> Result<()> {
    if problem.dim_y() != 1 {
        return Err(BilevelError::Capability(format!(
            "grid hyper-objective needs a scalar lower level, got d_y = {}",
            problem.dim_y()
        )));
    }
    if x.len() != problem.dim_x() {
        return Err(BilevelError::dim("x", problem.dim_x(), x.len()));
    }
    Ok(())
}

/// `φ(x) = min { f(x, y) : y ∈ argmin g(x, ·) }` with both minimizations
/// taken over `points` equally spaced `y` in `window`. Grid values within
/// `tie_tol` of the smallest `g` count as minimizers.
pub fn grid_hyperobjective(
    problem: &dyn BilevelProblem,
    x: &[f64],
    window: (f64, f64),
    points: usize,
    tie_tol: f64,
) -> Result<f64> {
    scalar_y(problem, x)?;
    if points < 2 || !(window.0 < window.1) {
        return Err(BilevelError::Input(format!(
            "grid needs at least 2 points on a nonempty window, got {points} on {window:?}"
        )));
    }
    let grid = linspace(window.0, window.1, points);
    let gs: Vec<f64> = grid.iter().map(|&y| problem.g(x, &[y])).collect();
    let gmin = gs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(grid
        .iter()
        .zip(&gs)
        .filter(|(_, &g)| g <= gmin + tie_tol)
        .map(|(&y, _)| problem.f(x, &[y]))
        .fold(f64::INFINITY, f64::min))
}

/// The same selection with the lower level solved by projected gradient
/// descent from `starts` equally spaced points of the box. Only for problems
/// with a `y` box.
pub fn projected_ll_hyperobjective(
    problem: &dyn BilevelProblem,
    x: &[f64],
    starts: usize,
    tie_tol: f64,
) -> Result<f64> {
    scalar_y(problem, x)?;
    let (lo, hi) = problem
        .y_box()
        .ok_or_else(|| BilevelError::Capability("projected lower-level solve needs a y box".into()))?;
    let opts = MinimizeOptions {
        tol: 1e-12,
        max_iters: 1_000_000,
        pl_guard: false,
    };
    let mut sols = Vec::with_capacity(starts);
    for s in linspace(lo, hi, starts.max(1)) {
        let m = minimize_penalty(problem, x, 0.0, &[s], &opts)?;
        sols.push((m.value, m.y[0]));
    }
    let gmin = sols.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    Ok(sols
        .iter()
        .filter(|s| s.0 <= gmin + tie_tol)
        .map(|s| problem.f(x, &[s.1]))
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::discontinuous::Discontinuous;

    #[test]
    fn grid_reproduces_both_sides() {
        for smoothed in [false, true] {
            let p = Discontinuous::new(smoothed);
            let phi = |x: f64| grid_hyperobjective(&p, &[x], p.grid_window(), 5001, 1e-12).unwrap();
            assert!((phi(1e-3) - 1e-6).abs() < 1e-12);
            assert!((phi(-1e-3) - (1.0 + 1e-6)).abs() < 1e-12);
            assert!(phi(0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_solve_agrees_with_closed_form() {
        let p = Discontinuous::new(false);
        for x in [-0.5, -1e-3, 1e-3, 0.3] {
            let v = projected_ll_hyperobjective(&p, &[x], 5, 1e-12).unwrap();
            assert!((v - p.analytic_phi(&[x]).unwrap()).abs() < 1e-9, "x = {x}: {v}");
        }
        assert!(matches!(
            projected_ll_hyperobjective(&Discontinuous::new(true), &[0.1], 5, 1e-12),
            Err(BilevelError::Capability(_))
        ));
    }
}
