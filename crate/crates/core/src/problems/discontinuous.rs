//! `f = x² + y²` with `g = xy` on `y ∈ [0, 1]`, whose hyper-objective jumps by 1 at `x = 0`.
//!
//! For `x > 0` the lower level picks `y = 0`, for `x < 0` it picks `y = 1`,
//! and at `x = 0` every `y ∈ [0, 1]` is optimal. The smoothed variant trades the
//! box for the penalty `(y − 1)·1[y ≥ 1] − y·1[y ≤ 0]` and keeps both limits.
//! Neither lower level is PL, so the penalty solvers refuse the problem; it is
//! evaluated by grid search and projected descent only.

use crate::problem::{BilevelProblem, PenaltySupport, ProblemConstants};

#[derive(Debug, Clone)]
pub struct Discontinuous {
    smoothed: bool,
    constants: ProblemConstants,
}

impl Discontinuous {
    pub fn new(smoothed: bool) -> Self {
        Self {
            smoothed,
            constants: ProblemConstants {
                c_f: 2.0,
                l_f: 2.0,
                l_g: 1.0,
                rho_f: 0.0,
                rho_g: 0.0,
                // No PL constant exists; a positive placeholder keeps the record valid.
                mu: 1e-9,
                sigma_bar: 1.0,
                m_f: 0.0,
                m_g: 0.0,
            },
        }
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothed
    }

    /// Interval the grid oracle scans for this variant.
    pub fn grid_window(&self) -> (f64, f64) {
        if self.smoothed {
            (-2.0, 3.0)
        } else {
            (0.0, 1.0)
        }
    }

    fn surrogate(y: f64) -> f64 {
        if y >= 1.0 {
            y - 1.0
        } else if y <= 0.0 {
            -y
        } else {
            0.0
        }
    }

    fn surrogate_slope(y: f64) -> f64 {
        if y > 1.0 {
            1.0
        } else if y < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

impl BilevelProblem for Discontinuous {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        1
    }

    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        x[0] * x[0] + y[0] * y[0]
    }

    fn grad_f_x(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![2.0 * x[0]]
    }

    fn grad_f_y(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![2.0 * y[0]]
    }

    fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        let base = x[0] * y[0];
        if self.smoothed {
            base + Self::surrogate(y[0])
        } else {
            base
        }
    }

    fn grad_g_x(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0]]
    }

    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        if self.smoothed {
            vec![x[0] + Self::surrogate_slope(y[0])]
        } else {
            vec![x[0]]
        }
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn analytic_phi(&self, x: &[f64]) -> Option<f64> {
        // Valid for |x| < 1 in the smoothed variant, everywhere for the box.
        let x = x[0];
        Some(if x < 0.0 { x * x + 1.0 } else { x * x })
    }

    fn analytic_phi_inf(&self) -> Option<f64> {
        Some(0.0)
    }

    fn y_box(&self) -> Option<(f64, f64)> {
        if self.smoothed {
            None
        } else {
            Some((0.0, 1.0))
        }
    }

    fn penalty_support(&self) -> PenaltySupport {
        let why = if self.smoothed {
            "the smoothed lower level xy + h(y) is nonsmooth and has flat minimizing intervals, so it is not PL"
        } else {
            "the lower level xy + I_[0,1](y) is constrained and not PL; its hyper-objective is discontinuous at x = 0"
        };
        PenaltySupport::Refused(why.to_string())
    }
}
