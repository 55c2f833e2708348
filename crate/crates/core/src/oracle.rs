//! First-order oracles: exact gradients, and additive-noise mini-batch gradients.
//!
//! The solvers only talk to a [`FirstOrderOracle`]. One call of
//! `grad_y_penalty` counts as a single oracle evaluation of the joint
//! `(∇_y f, ∇_y g)` pair at a point, matching how the algorithms are accounted.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BilevelError, Result};
use crate::problem::{check_dims, finite_vec, BilevelProblem};

/// Which partial gradient to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    FX,
    FY,
    GX,
    GY,
}

impl GradKind {
    fn is_upper(self) -> bool {
        matches!(self, GradKind::FX | GradKind::FY)
    }

    fn label(self) -> &'static str {
        match self {
            GradKind::FX => "grad_f_x",
            GradKind::FY => "grad_f_y",
            GradKind::GX => "grad_g_x",
            GradKind::GY => "grad_g_y",
        }
    }
}

pub trait FirstOrderOracle {
    fn problem(&self) -> &dyn BilevelProblem;

    fn grad_y_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;

    /// `σ ∇_y f(x, y) + ∇_y g(x, y)`.
    fn grad_y_penalty(&mut self, x: &[f64], y: &[f64], sigma: f64) -> Result<Vec<f64>>;

    fn grad_x_f(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;

    fn grad_x_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;

    /// Samples consumed by one call (`B`, or 1 for exact gradients).
    fn samples_per_call(&self) -> u64;

    /// True when gradients carry no noise.
    fn is_exact(&self) -> bool;
}

fn exact_grad(p: &dyn BilevelProblem, which: GradKind, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims(p, x, y)?;
    let v = match which {
        GradKind::FX => p.grad_f_x(x, y),
        GradKind::FY => p.grad_f_y(x, y),
        GradKind::GX => p.grad_g_x(x, y),
        GradKind::GY => p.grad_g_y(x, y),
    };
    finite_vec(v, which.label(), x, y)
}

fn combine_penalty(sigma: f64, gf: &[f64], gg: &[f64]) -> Vec<f64> {
    gf.iter().zip(gg).map(|(a, b)| sigma * a + b).collect()
}

/// Exact gradients straight from the problem.
pub struct ExactOracle<'p> {
    problem: &'p dyn BilevelProblem,
}

impl<'p> ExactOracle<'p> {
    pub fn new(problem: &'p dyn BilevelProblem) -> Self {
        Self { problem }
    }
}

impl FirstOrderOracle for ExactOracle<'_> {
    fn problem(&self) -> &dyn BilevelProblem {
        self.problem
    }

    fn grad_y_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        exact_grad(self.problem, GradKind::GY, x, y)
    }

    fn grad_y_penalty(&mut self, x: &[f64], y: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let gf = exact_grad(self.problem, GradKind::FY, x, y)?;
        let gg = exact_grad(self.problem, GradKind::GY, x, y)?;
        Ok(combine_penalty(sigma, &gf, &gg))
    }

    fn grad_x_f(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        exact_grad(self.problem, GradKind::FX, x, y)
    }

    fn grad_x_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        exact_grad(self.problem, GradKind::GX, x, y)
    }

    fn samples_per_call(&self) -> u64 {
        1
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Unbiased noisy gradients: the exact gradient plus i.i.d. Gaussian noise.
///
/// Each component of a draw has standard deviation `M / sqrt(dim_x + dim_y)`,
/// so the full stochastic gradient `(∇_x, ∇_y)` has variance exactly `M²`.
/// `M = noise_std_f` for gradients of `f` and `noise_std_g` for `g`.
pub struct StochasticOracle<'p> {
    base: &'p dyn BilevelProblem,
    noise_std_f: f64,
    noise_std_g: f64,
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    counter: u64,
}

impl<'p> StochasticOracle<'p> {
    pub fn new(base: &'p dyn BilevelProblem, noise_std_f: f64, noise_std_g: f64, seed: u64) -> Result<Self> {
        Self::with_stream(base, noise_std_f, noise_std_g, seed, 0)
    }

    /// Oracle on an independent substream of `seed`.
    pub fn with_stream(
        base: &'p dyn BilevelProblem,
        noise_std_f: f64,
        noise_std_g: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        for (name, v) in [("M_f", noise_std_f), ("M_g", noise_std_g)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(BilevelError::Config(format!(
                    "noise level {name} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(Self {
            base,
            noise_std_f,
            noise_std_g,
            seed,
            stream,
            rng: crate::rng::substream(seed, stream),
            counter: 0,
        })
    }

    pub fn base(&self) -> &'p dyn BilevelProblem {
        self.base
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of single-sample gradient draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Rewind to the start of the noise stream.
    pub fn reset(&mut self) {
        self.rng = crate::rng::substream(self.seed, self.stream);
        self.counter = 0;
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_std_f == 0.0 && self.noise_std_g == 0.0
    }

    /// Average of `batch` independent noisy draws of one partial gradient.
    pub fn noisy_grads(&mut self, which: GradKind, x: &[f64], y: &[f64], batch: usize) -> Result<Vec<f64>> {
        if batch == 0 {
            return Err(BilevelError::Input("mini-batch size must be at least 1".into()));
        }
        let mut grad = exact_grad(self.base, which, x, y)?;
        self.counter += batch as u64;
        let m = if which.is_upper() {
            self.noise_std_f
        } else {
            self.noise_std_g
        };
        if m == 0.0 {
            return Ok(grad);
        }
        // The mean of `batch` i.i.d. N(0, s²) draws is exactly N(0, s²/batch),
        // so one normal per component stands in for the whole batch.
        let per_component = m / ((self.base.dim_x() + self.base.dim_y()) as f64).sqrt();
        let s = per_component / (batch as f64).sqrt();
        for gi in grad.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            *gi += s * n;
        }
        Ok(grad)
    }

    /// View that draws every gradient as a mini-batch of size `batch`.
    pub fn minibatch(&mut self, batch: usize) -> Result<MiniBatch<'_, 'p>> {
        if batch == 0 {
            return Err(BilevelError::Input("mini-batch size must be at least 1".into()));
        }
        Ok(MiniBatch { oracle: self, batch })
    }
}

/// A [`StochasticOracle`] with a fixed mini-batch size.
pub struct MiniBatch<'o, 'p> {
    oracle: &'o mut StochasticOracle<'p>,
    batch: usize,
}

impl FirstOrderOracle for MiniBatch<'_, '_> {
    fn problem(&self) -> &dyn BilevelProblem {
        self.oracle.base
    }

    fn grad_y_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.oracle.noisy_grads(GradKind::GY, x, y, self.batch)
    }

    fn grad_y_penalty(&mut self, x: &[f64], y: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let gf = self.oracle.noisy_grads(GradKind::FY, x, y, self.batch)?;
        let gg = self.oracle.noisy_grads(GradKind::GY, x, y, self.batch)?;
        Ok(combine_penalty(sigma, &gf, &gg))
    }

    fn grad_x_f(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.oracle.noisy_grads(GradKind::FX, x, y, self.batch)
    }

    fn grad_x_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.oracle.noisy_grads(GradKind::GX, x, y, self.batch)
    }

    fn samples_per_call(&self) -> u64 {
        self.batch as u64
    }

    fn is_exact(&self) -> bool {
        self.oracle.is_noiseless()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::kernel_pl::KernelPl;

    #[test]
    fn zero_noise_is_bitwise_exact() {
        let p = KernelPl::new();
        let mut o = StochasticOracle::new(&p, 0.0, 0.0, 3).unwrap();
        let x = [0.37];
        let y = [1.3, -0.2];
        for which in [GradKind::FX, GradKind::FY, GradKind::GX, GradKind::GY] {
            let noisy = o.noisy_grads(which, &x, &y, 5).unwrap();
            let exact = exact_grad(&p, which, &x, &y).unwrap();
            let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&noisy), bits(&exact));
        }
        assert_eq!(o.counter(), 20);
    }

    #[test]
    fn reset_replays_the_stream() {
        let p = KernelPl::new();
        let mut o = StochasticOracle::new(&p, 1.0, 1.0, 42).unwrap();
        let a = o.noisy_grads(GradKind::GY, &[0.0], &[0.5, 0.5], 16).unwrap();
        o.reset();
        assert_eq!(o.counter(), 0);
        let b = o.noisy_grads(GradKind::GY, &[0.0], &[0.5, 0.5], 16).unwrap();
        assert_eq!(a, b);
        let c = o.noisy_grads(GradKind::GY, &[0.0], &[0.5, 0.5], 16).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_batch_is_input_error() {
        let p = KernelPl::new();
        let mut o = StochasticOracle::new(&p, 1.0, 1.0, 1).unwrap();
        assert!(matches!(
            o.noisy_grads(GradKind::FX, &[0.0], &[0.0, 0.0], 0),
            Err(BilevelError::Input(_))
        ));
        assert!(o.minibatch(0).is_err());
    }

    #[test]
    fn sample_mean_within_clt_band() {
        // 10^4 single draws of grad_g_y with M_g = 1; the per-component std is 1/sqrt(3) <= 1,
        // so the sample mean must land within 4/sqrt(10^4) of the true component.
        let p = KernelPl::new();
        let mut o = StochasticOracle::new(&p, 0.0, 1.0, 11).unwrap();
        let x = [0.2];
        let y = [0.9, 0.0];
        let truth = p.grad_g_y(&x, &y);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let d = o.noisy_grads(GradKind::GY, &x, &y, 1).unwrap()[0] - truth[0];
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean deviation {mean}");
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 1.0 / 3.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn batch_average_variance_scales_inversely() {
        let p = KernelPl::new();
        let mut o = StochasticOracle::new(&p, 1.0, 0.0, 5).unwrap();
        let x = [0.0];
        let y = [0.0, 0.0];
        let truth = p.grad_f_y(&x, &y)[0];
        let var_of = |o: &mut StochasticOracle, b: usize| {
            let n = 4000;
            let mut s2 = 0.0;
            for _ in 0..n {
                let d = o.noisy_grads(GradKind::FY, &x, &y, b).unwrap()[0] - truth;
                s2 += d * d;
            }
            s2 / n as f64
        };
        let v1 = var_of(&mut o, 1);
        let v16 = var_of(&mut o, 16);
        let ratio = v1 / v16;
        assert!((ratio - 16.0).abs() < 3.0, "variance ratio {ratio}");
    }
}
