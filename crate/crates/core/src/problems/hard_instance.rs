//! The zero-chain hard instance for zero-respecting penalty methods.
//!
//! With `q = 2TK` and `β = 1/√q`, the lower level is the scaled chain
//! `g(y) = β² h_q(y/β)` and the upper level is `f(x, y) = 2(x + 1)² r(y)`,
//! where `r` sums a flat-topped bump `ψ` over the last `q/2` coordinates.
//! Each gradient call can reveal at most one new coordinate of `y`, so after
//! `TK` inner steps the coordinates `r` reads are still zero, `∇_x f = 0`, and
//! `x` never moves, while the unique `y* = β𝟏` gives `φ(x) = (x + 1)²/2`.

use nalgebra::DMatrix;

use crate::error::{BilevelError, Result};
use crate::problem::{BilevelProblem, ProblemConstants};
use crate::vecops::linspace;

/// Budget pair the instance is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardInstanceSpec {
    pub t: usize,
    pub k: usize,
}

impl HardInstanceSpec {
    pub fn new(t: usize, k: usize) -> Result<Self> {
        if t == 0 || k == 0 {
            return Err(BilevelError::Config(format!(
                "hard instance needs T, K >= 1 (got T = {t}, K = {k})"
            )));
        }
        Ok(Self { t, k })
    }

    pub fn q(&self) -> usize {
        2 * self.t * self.k
    }

    pub fn beta(&self) -> f64 {
        1.0 / (self.q() as f64).sqrt()
    }
}

/// Value and gradient of `h_q(z) = ⅛(z₁ − 1)² + ⅛ Σ (z_{j+1} − z_j)²`.
pub fn zero_chain_value_grad(q: usize, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z.len() != q || q == 0 {
        return Err(BilevelError::dim("zero-chain input", q, z.len()));
    }
    Ok(chain(z, 1.0))
}

/// `⅛(z₁ − a)² + ⅛ Σ (z_{j+1} − z_j)²` and its gradient.
fn chain(z: &[f64], anchor: f64) -> (f64, Vec<f64>) {
    let q = z.len();
    let mut value = 0.125 * (z[0] - anchor).powi(2);
    let mut grad = vec![0.0; q];
    grad[0] = 0.25 * (z[0] - anchor);
    for j in 0..q - 1 {
        let d = z[j + 1] - z[j];
        value += 0.125 * d * d;
        grad[j] -= 0.25 * d;
        grad[j + 1] += 0.25 * d;
    }
    (value, grad)
}

/// Tridiagonal Hessian of `h_q` (and of the scaled chain).
pub fn chain_hessian(q: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(q, q);
    for j in 0..q {
        a[(j, j)] = if j + 1 == q { 0.25 } else { 0.5 };
        if j + 1 < q {
            a[(j, j + 1)] = -0.25;
            a[(j + 1, j)] = -0.25;
        }
    }
    a
}

/// Smallest eigenvalue of [`chain_hessian`], `½(1 − cos(π/(2q + 1)))`.
pub fn chain_lambda_min(q: usize) -> f64 {
    0.5 * (1.0 - (std::f64::consts::PI / (2 * q + 1) as f64).cos())
}

/// The quintic bridging `t²/2` at `t = β` to the plateau `β²` at `t = 2β`.
pub fn bridge(y: f64, beta: f64) -> f64 {
    -y.powi(5) / (2.0 * beta.powi(3)) + 9.0 * y.powi(4) / (2.0 * beta * beta) - 31.0 * y.powi(3) / (2.0 * beta)
        + 25.0 * y * y
        - 18.0 * beta * y
        + 5.0 * beta * beta
}

fn bridge_d1(y: f64, beta: f64) -> f64 {
    -5.0 * y.powi(4) / (2.0 * beta.powi(3)) + 18.0 * y.powi(3) / (beta * beta) - 93.0 * y * y / (2.0 * beta) + 50.0 * y
        - 18.0 * beta
}

fn bridge_d2(y: f64, beta: f64) -> f64 {
    -10.0 * y.powi(3) / beta.powi(3) + 54.0 * y * y / (beta * beta) - 93.0 * y / beta + 50.0
}

fn bridge_d3(y: f64, beta: f64) -> f64 {
    -30.0 * y * y / beta.powi(3) + 108.0 * y / (beta * beta) - 93.0 / beta
}

/// `ψ(t)`: `t²/2` for `|t| ≤ β`, the bridge on `β < |t| ≤ 2β`, `β²` beyond.
pub fn psi(t: f64, beta: f64) -> f64 {
    let a = t.abs();
    if a <= beta {
        0.5 * t * t
    } else if a <= 2.0 * beta {
        bridge(a, beta)
    } else {
        beta * beta
    }
}

pub fn psi_prime(t: f64, beta: f64) -> f64 {
    let a = t.abs();
    if a <= beta {
        t
    } else if a <= 2.0 * beta {
        t.signum() * bridge_d1(a, beta)
    } else {
        0.0
    }
}

pub fn psi_second(t: f64, beta: f64) -> f64 {
    let a = t.abs();
    if a <= beta {
        1.0
    } else if a <= 2.0 * beta {
        bridge_d2(a, beta)
    } else {
        0.0
    }
}

pub fn psi_third(t: f64, beta: f64) -> f64 {
    let a = t.abs();
    if a <= beta {
        0.0
    } else if a <= 2.0 * beta {
        t.signum() * bridge_d3(a, beta)
    } else {
        0.0
    }
}

/// Suprema of `|ψ|, |ψ'|, |ψ''|, |ψ'''|` for `β = 1`, measured on a grid.
///
/// For general `β` the derivatives scale as `β², β, 1, 1/β`.
pub fn measure_gammas(grid_points: usize) -> [f64; 4] {
    let mut g = [0.0f64; 4];
    for t in linspace(0.0, 3.0, grid_points) {
        g[0] = g[0].max(psi(t, 1.0).abs());
        g[1] = g[1].max(psi_prime(t, 1.0).abs());
        g[2] = g[2].max(psi_second(t, 1.0).abs());
        g[3] = g[3].max(psi_third(t, 1.0).abs());
    }
    g
}

#[derive(Debug, Clone)]
pub struct HardInstance {
    spec: HardInstanceSpec,
    q: usize,
    beta: f64,
    gammas: [f64; 4],
    lambda_min: f64,
    constants: ProblemConstants,
}

impl HardInstance {
    pub fn new(spec: HardInstanceSpec) -> Self {
        let q = spec.q();
        let beta = spec.beta();
        let gammas = measure_gammas(30_001);
        let lambda_min = chain_lambda_min(q);
        // With |x + 1| ≤ 1, ∇²_yy f has norm ≤ 2γ₂, so σ̄ = λ_min/(4γ₂) keeps
        // h_σ strongly convex with modulus λ_min/2 for all σ ≤ σ̄.
        let constants = ProblemConstants {
            c_f: std::f64::consts::SQRT_2 * gammas[1],
            l_f: 2.0 * gammas[2],
            l_g: 1.0,
            rho_f: 2.0 * gammas[3] / beta,
            rho_g: 0.0,
            mu: 0.5 * lambda_min,
            sigma_bar: lambda_min / (4.0 * gammas[2]),
            m_f: 0.0,
            m_g: 0.0,
        };
        Self {
            spec,
            q,
            beta,
            gammas,
            lambda_min,
            constants,
        }
    }

    pub fn spec(&self) -> HardInstanceSpec {
        self.spec
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gammas(&self) -> [f64; 4] {
        self.gammas
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// First coordinate `r` reads (0-indexed); `r` covers `q/2 .. q`.
    pub fn tail_start(&self) -> usize {
        self.q / 2
    }

    /// `r(y) = Σ_{j ≥ q/2} ψ(y_j)`.
    pub fn r(&self, y: &[f64]) -> f64 {
        y[self.tail_start()..].iter().map(|&t| psi(t, self.beta)).sum()
    }

    pub fn grad_r(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.q];
        for j in self.tail_start()..self.q {
            g[j] = psi_prime(y[j], self.beta);
        }
        g
    }

    pub fn solution(&self) -> Vec<f64> {
        vec![self.beta; self.q]
    }
}

impl BilevelProblem for HardInstance {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        self.q
    }

    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        2.0 * (x[0] + 1.0).powi(2) * self.r(y)
    }

    fn grad_f_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![4.0 * (x[0] + 1.0) * self.r(y)]
    }

    fn grad_f_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let s = 2.0 * (x[0] + 1.0).powi(2);
        self.grad_r(y).into_iter().map(|v| s * v).collect()
    }

    fn g(&self, _x: &[f64], y: &[f64]) -> f64 {
        chain(y, self.beta).0
    }

    fn grad_g_x(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0]
    }

    fn grad_g_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        chain(y, self.beta).1
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn hess_g_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(chain_hessian(self.q))
    }

    fn hess_g_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(1, self.q))
    }

    fn analytic_phi(&self, x: &[f64]) -> Option<f64> {
        Some(0.5 * (x[0] + 1.0).powi(2))
    }

    fn analytic_grad_phi(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![x[0] + 1.0])
    }

    fn analytic_phi_inf(&self) -> Option<f64> {
        Some(0.0)
    }

    fn project_to_solution_set(&self, _x: &[f64], sigma: f64, _y: &[f64]) -> Option<Vec<f64>> {
        (sigma == 0.0).then(|| self.solution())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::support;

    fn instance(t: usize, k: usize) -> HardInstance {
        HardInstance::new(HardInstanceSpec::new(t, k).unwrap())
    }

    #[test]
    fn spec_dimensions() {
        let s = HardInstanceSpec::new(10, 10).unwrap();
        assert_eq!(s.q(), 200);
        assert!((s.beta() - 200f64.powf(-0.5)).abs() < 1e-16);
        assert!(HardInstanceSpec::new(0, 3).is_err());
    }

    #[test]
    fn psi_knots() {
        let b = 0.1;
        assert_eq!(psi(0.0, b), 0.0);
        assert_eq!(psi_prime(0.0, b), 0.0);
        assert!((bridge(b, b) - b * b / 2.0).abs() < 1e-15);
        assert!((bridge_d1(b, b) - b).abs() < 1e-13);
        assert!((bridge_d2(b, b) - 1.0).abs() < 1e-11);
        assert!((bridge(2.0 * b, b) - b * b).abs() < 1e-15);
        assert!(bridge_d1(2.0 * b, b).abs() < 1e-13);
        assert!(bridge_d2(2.0 * b, b).abs() < 1e-11);
        assert_eq!(psi(3.0 * b, b), b * b);
        assert_eq!(psi(-3.0 * b, b), b * b);
    }

    #[test]
    fn psi_derivatives_match_differences() {
        let b = 0.3;
        let h = 1e-6;
        for t in linspace(-0.8, 0.8, 161) {
            let fd = (psi(t + h, b) - psi(t - h, b)) / (2.0 * h);
            assert!((fd - psi_prime(t, b)).abs() < 1e-6, "t = {t}");
            let fd2 = (psi_prime(t + h, b) - psi_prime(t - h, b)) / (2.0 * h);
            assert!((fd2 - psi_second(t, b)).abs() < 1e-4, "t = {t}");
        }
    }

    #[test]
    fn chain_values() {
        let (v, g) = zero_chain_value_grad(5, &[1.0; 5]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let (v, g) = zero_chain_value_grad(5, &[0.0; 5]).unwrap();
        assert_eq!(v, 0.125);
        assert_eq!(support(&g), vec![0]);
        assert!(zero_chain_value_grad(5, &[0.0; 4]).is_err());
    }

    #[test]
    fn chain_hessian_has_unit_norm_bound() {
        // Power iteration on the q = 64 Hessian.
        let a = chain_hessian(64);
        let mut v = nalgebra::DVector::from_fn(64, |i, _| 1.0 + (i as f64).sin());
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w = &a * &v;
            lambda = w.norm() / v.norm();
            v = w.normalize();
        }
        assert!(lambda <= 1.0 + 1e-12, "{lambda}");
    }

    #[test]
    fn lambda_min_matches_eigensolver() {
        for q in [2usize, 7, 50] {
            let eig = nalgebra::SymmetricEigen::new(chain_hessian(q));
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((min - chain_lambda_min(q)).abs() < 1e-12, "q = {q}");
        }
    }

    #[test]
    fn solution_values() {
        let p = instance(5, 5);
        let y = p.solution();
        assert!((p.r(&y) - 0.25).abs() < 1e-14);
        assert!((p.f(&[0.3], &y) - 0.5 * 1.3f64.powi(2)).abs() < 1e-14);
        assert_eq!(p.g(&[0.0], &y), 0.0);
        let q = p.q() as f64;
        assert!((p.g(&[0.0], &vec![0.0; p.q()]) - 1.0 / (8.0 * q)).abs() < 1e-16);
    }

    #[test]
    fn upper_gradient_in_x_vanishes_on_untouched_tail() {
        let p = instance(3, 2);
        let mut y = vec![0.0; p.q()];
        for (j, v) in y.iter_mut().enumerate().take(p.tail_start()) {
            *v = 0.3 + j as f64;
        }
        assert_eq!(p.grad_f_x(&[0.7], &y), vec![0.0]);
    }

    #[test]
    fn gammas_bound_r() {
        let p = instance(2, 2);
        let g = p.gammas();
        assert_eq!(g[0], 1.0);
        assert!(g[1] >= 1.0 && g[2] >= 1.0);
        let y: Vec<f64> = (0..p.q()).map(|j| (j as f64 * 0.37).sin() * 0.5).collect();
        assert!(p.r(&y) <= g[0] / 2.0 + 1e-15);
        assert!(crate::vecops::norm(&p.grad_r(&y)) <= g[1] / 2f64.sqrt() + 1e-12);
    }
}
