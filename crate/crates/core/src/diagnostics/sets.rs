use crate::error::{BilevelError, Result};
use crate::inner::{minimize_penalty, MinimizeOptions};
use crate::problem::BilevelProblem;
use crate::vecops;

/// Finitely many points of `Y*_σ(x)`, each with the gradient norm that
/// certifies it. Set claims built on this are relative to the sampled window.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSetApprox {
    pub points: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl SolutionSetApprox {
    pub fn new(points: Vec<Vec<f64>>, residuals: Vec<f64>) -> Result<Self> {
        if points.len() != residuals.len() {
            return Err(BilevelError::Input(format!(
                "{} points but {} residuals",
                points.len(),
                residuals.len()
            )));
        }
        if let Some(p) = points.first() {
            if points.iter().any(|q| q.len() != p.len()) {
                return Err(BilevelError::Input("solution-set points differ in dimension".into()));
            }
        }
        Ok(Self { points, residuals })
    }

    /// Exact points, zero residual.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Minimizes `σ f + g` in `y` from each start and keeps the limits.
pub fn sample_solution_set(
    problem: &dyn BilevelProblem,
    x: &[f64],
    sigma: f64,
    starts: &[Vec<f64>],
    opts: &MinimizeOptions,
) -> Result<SolutionSetApprox> {
    let mut points = Vec::with_capacity(starts.len());
    let mut residuals = Vec::with_capacity(starts.len());
    for s in starts {
        let m = minimize_penalty(problem, x, sigma, s, opts)?;
        points.push(m.y);
        residuals.push(m.residual);
    }
    SolutionSetApprox::new(points, residuals)
}

fn directed(a: &SolutionSetApprox, b: &SolutionSetApprox) -> f64 {
    a.points
        .iter()
        .map(|p| {
            b.points
                .iter()
                .map(|q| vecops::dist(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Hausdorff distance between two finite point sets.
pub fn hausdorff_distance(a: &SolutionSetApprox, b: &SolutionSetApprox) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(BilevelError::Input("Hausdorff distance needs two nonempty sets".into()));
    }
    if a.points[0].len() != b.points[0].len() {
        return Err(BilevelError::dim("set point", a.points[0].len(), b.points[0].len()));
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// `dist(Y*_{σ₁}(x₁), Y*_{σ₂}(x₂))` through the problem's analytic
/// projections. Each anchor is projected onto one set and its distance to the
/// other is measured; the largest such distance is returned.
pub fn set_distance(
    problem: &dyn BilevelProblem,
    (x1, s1): (&[f64], f64),
    (x2, s2): (&[f64], f64),
    anchors: &[Vec<f64>],
) -> Result<f64> {
    let proj = |x: &[f64], s: f64, y: &[f64]| {
        problem
            .project_to_solution_set(x, s, y)
            .ok_or_else(|| BilevelError::Capability("problem has no analytic solution-set projection".into()))
    };
    let mut worst = 0.0f64;
    for a in anchors {
        let p1 = proj(x1, s1, a)?;
        worst = worst.max(vecops::dist(&p1, &proj(x2, s2, &p1)?));
        let p2 = proj(x2, s2, a)?;
        worst = worst.max(vecops::dist(&p2, &proj(x1, s1, &p2)?));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetLipschitzRow {
    pub x1: Vec<f64>,
    pub sigma1: f64,
    pub x2: Vec<f64>,
    pub sigma2: f64,
    pub measured: f64,
    /// `(C_f/μ)|σ₁ − σ₂| + ((σ L_f + L_g)/μ)‖x₁ − x₂‖` with `σ = max(σ₁, σ₂)`.
    pub bound: f64,
}

impl SetLipschitzRow {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound * (1.0 + 1e-12) + 1e-14
    }
}

/// Measures the stability of `Y*_σ(x)` in `(x, σ)` for each pair.
pub fn set_lipschitz_check(
    problem: &dyn BilevelProblem,
    pairs: &[((Vec<f64>, f64), (Vec<f64>, f64))],
    anchors: &[Vec<f64>],
) -> Result<Vec<SetLipschitzRow>> {
    let c = problem.constants();
    pairs
        .iter()
        .map(|((x1, s1), (x2, s2))| {
            let measured = set_distance(problem, (x1, *s1), (x2, *s2), anchors)?;
            let sigma = s1.max(*s2);
            let bound = c.c_f / c.mu * (s1 - s2).abs() + (sigma * c.l_f + c.l_g) / c.mu * vecops::dist(x1, x2);
            Ok(SetLipschitzRow {
                x1: x1.clone(),
                sigma1: *s1,
                x2: x2.clone(),
                sigma2: *s2,
                measured,
                bound,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::kernel_pl::KernelPl;

    fn pts(v: &[f64]) -> SolutionSetApprox {
        SolutionSetApprox::from_points(v.iter().map(|&a| vec![a]).collect()).unwrap()
    }

    #[test]
    fn hausdorff_basics() {
        let s = pts(&[0.0, 1.0, 2.5]);
        assert_eq!(hausdorff_distance(&s, &s).unwrap(), 0.0);
        assert_eq!(hausdorff_distance(&pts(&[0.0]), &pts(&[3.0])).unwrap(), 3.0);
        assert_eq!(hausdorff_distance(&pts(&[0.0, 1.0]), &pts(&[0.0])).unwrap(), 1.0);
        assert!(matches!(hausdorff_distance(&pts(&[]), &s), Err(BilevelError::Input(_))));
    }

    #[test]
    fn kernel_lines_are_offset_by_x_gap() {
        let p = KernelPl::new();
        let starts: Vec<Vec<f64>> = crate::vecops::linspace(-3.0, 3.0, 13)
            .into_iter()
            .map(|t| vec![0.0, t])
            .collect();
        let opts = MinimizeOptions::default();
        let a = sample_solution_set(&p, &[0.2], 0.0, &starts, &opts).unwrap();
        let b = sample_solution_set(&p, &[0.9], 0.0, &starts, &opts).unwrap();
        assert!(a.residuals.iter().all(|&r| r <= 1e-12));
        assert!((hausdorff_distance(&a, &b).unwrap() - 0.7).abs() < 1e-10);
        let d = set_distance(&p, (&[0.2], 0.0), (&[0.9], 0.0), &starts).unwrap();
        assert!((d - 0.7).abs() < 1e-12);
    }

    #[test]
    fn kernel_set_lipschitz_pair() {
        let p = KernelPl::new();
        let rows = set_lipschitz_check(&p, &[((vec![0.1], 0.2), (vec![0.7], 0.9))], &[vec![0.0, 0.0]]).unwrap();
        let want = ((0.1f64 + 0.2) / 1.2 - (0.7 + 0.9) / 1.9).abs();
        assert!((rows[0].measured - want).abs() < 1e-12);
        assert!(rows[0].holds());
    }
}
