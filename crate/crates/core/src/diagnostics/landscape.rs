use rand::Rng;

use crate::error::{BilevelError, Result};
use crate::exec::{map_cells, Execution};
use crate::inner::{minimize_penalty, penalty_value, MinimizeOptions};
use crate::linalg::min_nonzero_eigenvalue;
use crate::penalty::PenaltyObjective;
use crate::problem::{check_dims, dist_to_solution_set, BilevelProblem};
use crate::rng::{stream_id, substream, Purpose};
use crate::vecops;

use super::hypergradient::fd_hypergradient;

/// Where PL ratios are probed: each `x` in `xs`, with `y` drawn uniformly
/// from the box `[y_lo, y_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRegion {
    pub xs: Vec<Vec<f64>>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlRatio {
    pub min_ratio: f64,
    pub worst_x: Vec<f64>,
    pub worst_y: Vec<f64>,
    pub evaluated: usize,
    /// Probes within `1e-12` of the minimum value.
    pub skipped: usize,
}

/// `min ‖∇_y h_σ‖² / (2(h_σ − h_σ*))` over `probe_count` random `y` per `x`,
/// with `h_σ*` certified by a gradient-descent solve to `1e-12`. Each `x` is
/// an independent cell and may run in parallel.
pub fn pl_ratio_certificate(
    problem: &(dyn BilevelProblem + Sync),
    sigma: f64,
    probe_count: usize,
    region: &ProbeRegion,
) -> Result<PlRatio> {
    let dy = problem.dim_y();
    if region.y_lo.len() != dy || region.y_hi.len() != dy {
        return Err(BilevelError::dim(
            "probe box",
            dy,
            region.y_lo.len().min(region.y_hi.len()),
        ));
    }
    if region.y_lo.iter().zip(&region.y_hi).any(|(a, b)| !(a <= b)) {
        return Err(BilevelError::Input("probe box has lo > hi".into()));
    }
    let center: Vec<f64> = region
        .y_lo
        .iter()
        .zip(&region.y_hi)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let indexed: Vec<(usize, &Vec<f64>)> = region.xs.iter().enumerate().collect();
    let cells = map_cells(Execution::default(), &indexed, |_, &(i, x)| -> Result<PlRatio> {
        check_dims(problem, x, &center)?;
        let hstar = minimize_penalty(problem, x, sigma, &center, &MinimizeOptions::default())?.value;
        let mut rng = substream(region.seed, stream_id(i, Purpose::Probes));
        let mut best = PlRatio {
            min_ratio: f64::INFINITY,
            worst_x: x.clone(),
            worst_y: center.clone(),
            evaluated: 0,
            skipped: 0,
        };
        for _ in 0..probe_count {
            let y: Vec<f64> = region
                .y_lo
                .iter()
                .zip(&region.y_hi)
                .map(|(&a, &b)| if a < b { rng.random_range(a..b) } else { a })
                .collect();
            let gap = penalty_value(problem, x, &y, sigma) - hstar;
            if gap <= 1e-12 {
                best.skipped += 1;
                continue;
            }
            let gf = problem.grad_f_y(x, &y);
            let gg = problem.grad_g_y(x, &y);
            let grad_sq: f64 = gf.iter().zip(&gg).map(|(a, b)| (sigma * a + b).powi(2)).sum();
            let ratio = grad_sq / (2.0 * gap);
            best.evaluated += 1;
            if ratio < best.min_ratio {
                best.min_ratio = ratio;
                best.worst_y = y;
            }
        }
        Ok(best)
    });
    let mut out = PlRatio {
        min_ratio: f64::INFINITY,
        worst_x: Vec::new(),
        worst_y: Vec::new(),
        evaluated: 0,
        skipped: 0,
    };
    for cell in cells {
        let c = cell?;
        out.evaluated += c.evaluated;
        out.skipped += c.skipped;
        if c.min_ratio < out.min_ratio || out.worst_x.is_empty() {
            out.min_ratio = c.min_ratio;
            out.worst_x = c.worst_x;
            out.worst_y = c.worst_y;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessProbe {
    /// Largest `‖∇φ(x₁) − ∇φ(x₂)‖ / ‖x₁ − x₂‖` seen.
    pub max_ratio: f64,
    /// `ℓ κ³` from the declared constants.
    pub reference: f64,
    /// `max_ratio / reference`.
    pub fitted_c: f64,
    pub pairs_used: usize,
    /// `"analytic"` or `"finite-difference"`.
    pub source: &'static str,
}

/// Empirical Lipschitz constant of `∇φ`. Uses the closed form when the
/// problem has one, else finite differences of `φ_σ` at `σ = 1e-5`.
/// Coincident pairs are skipped.
pub fn smoothness_probe(problem: &dyn BilevelProblem, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<SmoothnessProbe> {
    let analytic = pairs
        .first()
        .is_none_or(|(a, _)| problem.analytic_grad_phi(a).is_some());
    let grad = |x: &[f64]| -> Result<Vec<f64>> {
        if analytic {
            problem
                .analytic_grad_phi(x)
                .ok_or_else(|| BilevelError::Capability("closed-form gradient missing at a probe".into()))
        } else {
            Ok(fd_hypergradient(problem, x, 1e-5, 1e-4)?.grad)
        }
    };
    let mut max_ratio = 0.0f64;
    let mut used = 0;
    for (a, b) in pairs {
        if a.len() != problem.dim_x() || b.len() != problem.dim_x() {
            return Err(BilevelError::dim("x", problem.dim_x(), a.len().max(b.len())));
        }
        let d = vecops::dist(a, b);
        if d == 0.0 {
            continue;
        }
        max_ratio = max_ratio.max(vecops::dist(&grad(a)?, &grad(b)?) / d);
        used += 1;
    }
    let c = problem.constants();
    let reference = c.ell() * c.kappa().powi(3);
    Ok(SmoothnessProbe {
        max_ratio,
        reference,
        fitted_c: max_ratio / reference,
        pairs_used: used,
        source: if analytic { "analytic" } else { "finite-difference" },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest `|fd − declared| / max(1, |declared|)` over all components.
    pub max_rel_err: f64,
    /// Which gradient and point produced it.
    pub worst: String,
    /// Largest `‖∇_y f(x, y) − ∇_y f(x, y')‖ / ‖y − y'‖` over consecutive probe points, `x` taken from the first.
    pub l_f_estimate: f64,
    pub l_g_estimate: f64,
}

fn fd_partial(fun: &dyn Fn(&[f64], &[f64]) -> f64, x: &[f64], y: &[f64], in_x: bool, i: usize, h: f64) -> f64 {
    let (mut xp, mut xm, mut yp, mut ym) = (x.to_vec(), x.to_vec(), y.to_vec(), y.to_vec());
    if in_x {
        xp[i] += h;
        xm[i] -= h;
    } else {
        yp[i] += h;
        ym[i] -= h;
    }
    (fun(&xp, &yp) - fun(&xm, &ym)) / (2.0 * h)
}

/// Compares every declared gradient with central differences of `f` and `g`
/// at the given `(x, y)` points, and estimates gradient Lipschitz constants
/// from consecutive points.
pub fn gradient_check(problem: &dyn BilevelProblem, points: &[(Vec<f64>, Vec<f64>)], h: f64) -> Result<GradientCheck> {
    let f = |x: &[f64], y: &[f64]| problem.f(x, y);
    let g = |x: &[f64], y: &[f64]| problem.g(x, y);
    let mut max_rel_err = 0.0f64;
    let mut worst = String::new();
    for (x, y) in points {
        check_dims(problem, x, y)?;
        let cases: [(&str, &dyn Fn(&[f64], &[f64]) -> f64, bool, Vec<f64>); 4] = [
            ("grad_f_x", &f, true, problem.grad_f_x(x, y)),
            ("grad_f_y", &f, false, problem.grad_f_y(x, y)),
            ("grad_g_x", &g, true, problem.grad_g_x(x, y)),
            ("grad_g_y", &g, false, problem.grad_g_y(x, y)),
        ];
        for (name, fun, in_x, declared) in cases {
            for (i, d) in declared.iter().enumerate() {
                let fd = fd_partial(fun, x, y, in_x, i, h);
                let err = (fd - d).abs() / d.abs().max(1.0);
                if err > max_rel_err {
                    max_rel_err = err;
                    worst = format!("{name}[{i}] at x = {x:?}, y = {y:?}: declared {d:e}, fd {fd:e}");
                }
            }
        }
    }
    // y-block smoothness at fixed x: the constants the inner step sizes use.
    let (mut lf, mut lg) = (0.0f64, 0.0f64);
    for w in points.windows(2) {
        let (x, y1) = &w[0];
        let (_, y2) = &w[1];
        let d = vecops::dist(y1, y2);
        if d == 0.0 {
            continue;
        }
        lf = lf.max(vecops::dist(&problem.grad_f_y(x, y1), &problem.grad_f_y(x, y2)) / d);
        lg = lg.max(vecops::dist(&problem.grad_g_y(x, y1), &problem.grad_g_y(x, y2)) / d);
    }
    Ok(GradientCheck {
        max_rel_err,
        worst,
        l_f_estimate: lf,
        l_g_estimate: lg,
    })
}

/// Smallest nonzero eigenvalue of `∇²_yy g` at a lower-level minimizer.
/// Eigenvalues with `|λ| ≤ zero_tol` count as kernel.
pub fn hessian_eigen_check(
    problem: &dyn BilevelProblem,
    x: &[f64],
    y_star: &[f64],
    zero_tol: f64,
) -> Result<Option<f64>> {
    check_dims(problem, x, y_star)?;
    let hyy = problem
        .hess_g_yy(x, y_star)
        .ok_or_else(|| BilevelError::Capability("problem does not provide the lower-level Hessian".into()))?;
    let r = vecops::norm(&problem.grad_g_y(x, y_star));
    if r > 1e-8 {
        return Err(BilevelError::Input(format!(
            "y is not a lower-level minimizer (gradient norm {r:e})"
        )));
    }
    min_nonzero_eigenvalue(&hyy, zero_tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionRow {
    pub k: usize,
    pub dist0_sq: f64,
    pub dist_k_sq: f64,
    /// `(1 − μ/L_g)^K (L_g/μ) dist0²`.
    pub bound: f64,
}

impl ContractionRow {
    pub fn holds(&self) -> bool {
        // Rounding slack matters when μ = L_g makes the bound exactly 0.
        self.dist_k_sq <= self.bound * (1.0 + 1e-12) + 1e-24 * self.dist0_sq
    }
}

/// Runs `K` steps of `z ← z − ∇_y g(x, z)/L_g` from `y0` for each `K` and
/// measures `dist²(z_K, Y*(x))` with the analytic projection.
pub fn contraction_check(
    problem: &dyn BilevelProblem,
    x: &[f64],
    y0: &[f64],
    ks: &[usize],
) -> Result<Vec<ContractionRow>> {
    check_dims(problem, x, y0)?;
    let c = problem.constants();
    let dist = |y: &[f64]| {
        dist_to_solution_set(problem, x, 0.0, y)
            .ok_or_else(|| BilevelError::Capability("contraction check needs an analytic solution set".into()))
    };
    let d0 = dist(y0)?.powi(2);
    let rate = 1.0 - c.mu / c.l_g;
    ks.iter()
        .map(|&k| {
            let mut z = y0.to_vec();
            for _ in 0..k {
                let g = problem.grad_g_y(x, &z);
                vecops::descend(&mut z, 1.0 / c.l_g, &g);
            }
            Ok(ContractionRow {
                k,
                dist0_sq: d0,
                dist_k_sq: dist(&z)?.powi(2),
                bound: rate.powi(k as i32) * (c.l_g / c.mu) * d0,
            })
        })
        .collect()
}

/// `(σ, |φ_σ(x) − φ(x)|)` for each `σ`, with `φ_σ` evaluated by inner solves
/// and `φ` from the closed form.
pub fn penalty_gap_curve(problem: &dyn BilevelProblem, x: &[f64], sigmas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let phi = problem
        .analytic_phi(x)
        .ok_or_else(|| BilevelError::Capability("penalty gap needs a closed-form phi".into()))?;
    sigmas
        .iter()
        .map(|&s| {
            let v = PenaltyObjective::new(problem, s)?.penalized_hyperobjective_value(x)?;
            Ok((s, (v.value - phi).abs()))
        })
        .collect()
}
