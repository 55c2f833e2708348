//! Benchmark problems with known hyper-objectives, addressable by name.

pub mod degenerate;
pub mod discontinuous;
pub mod hard_instance;
pub mod kernel_pl;
pub mod quadratic_sc;
pub mod sin_sq;

use std::fmt;

use crate::error::{BilevelError, Result};
use crate::problem::BilevelProblem;

pub use hard_instance::HardInstanceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    StronglyConvex,
    KernelPl,
    SinSqPl,
    HardInstance,
    Discontinuous,
    DegeneratePenalty,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::StronglyConvex => "strongly_convex",
            Regime::KernelPl => "kernel_pl",
            Regime::SinSqPl => "sin_sq_pl",
            Regime::HardInstance => "hard_instance",
            Regime::Discontinuous => "discontinuous",
            Regime::DegeneratePenalty => "degenerate_penalty",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A problem together with its default starting point and a note on where its
/// closed forms come from.
pub struct SuiteProblem {
    pub name: String,
    pub problem: Box<dyn BilevelProblem + Send + Sync>,
    pub regime: Regime,
    pub notes: String,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

impl fmt::Debug for SuiteProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SuiteProblem")
            .field("name", &self.name)
            .field("regime", &self.regime)
            .field("dim_x", &self.problem.dim_x())
            .field("dim_y", &self.problem.dim_y())
            .finish()
    }
}

pub fn make_quadratic_sc() -> SuiteProblem {
    SuiteProblem {
        name: "quadratic_sc".into(),
        problem: Box::new(quadratic_sc::QuadraticSc::new()),
        regime: Regime::StronglyConvex,
        notes: "y*(x) = x e1, so phi(x) = (x-1)^2/2 + x^2/2; C_f = 1 on the unit ball".into(),
        x0: vec![0.0],
        y0: vec![1.0, 1.0],
    }
}

pub fn make_kernel_pl() -> SuiteProblem {
    SuiteProblem {
        name: "kernel_pl".into(),
        problem: Box::new(kernel_pl::KernelPl::new()),
        regime: Regime::KernelPl,
        notes: "Y*_sigma(x) = {((x+sigma)/(1+sigma), t)}; phi_sigma(x) = (x-1)^2/(2(1+sigma))".into(),
        x0: vec![0.0],
        y0: vec![1.0, 1.0],
    }
}

pub fn make_sin_sq_pl() -> SuiteProblem {
    let p = sin_sq::SinSqPl::new();
    let c = p.certificate().clone();
    SuiteProblem {
        name: "sin_sq_pl".into(),
        notes: format!(
            "Y*(x) = {{x}}; mu = {} x grid minimum {:.6e} over {} probes (worst at x = {}, sigma = {}, y = {:.4})",
            sin_sq::MU_SAFETY,
            c.raw_min_ratio,
            c.probes,
            c.worst_x,
            c.worst_sigma,
            c.worst_y
        ),
        problem: Box::new(p),
        regime: Regime::SinSqPl,
        x0: vec![0.0],
        y0: vec![1.0],
    }
}

pub fn make_discontinuous_example(smoothed: bool) -> SuiteProblem {
    SuiteProblem {
        name: if smoothed {
            "discontinuous_smoothed".into()
        } else {
            "discontinuous".into()
        },
        problem: Box::new(discontinuous::Discontinuous::new(smoothed)),
        regime: Regime::Discontinuous,
        notes: "phi(x) = x^2 for x > 0 and x^2 + 1 for x < 0 (|x| < 1 when smoothed); penalty route refused".into(),
        x0: vec![0.5],
        y0: vec![0.5],
    }
}

pub fn make_degenerate_penalty_example() -> SuiteProblem {
    SuiteProblem {
        name: "degenerate_penalty".into(),
        problem: Box::new(degenerate::DegeneratePenalty::new()),
        regime: Regime::DegeneratePenalty,
        notes: "sigma f + g is unbounded below in y1 for x != 0; refused by the inner PL guard".into(),
        x0: vec![1.0],
        y0: vec![0.0, 1.0],
    }
}

pub fn make_degenerate_penalty_boxed() -> SuiteProblem {
    SuiteProblem {
        name: "degenerate_penalty_boxed".into(),
        problem: Box::new(degenerate::DegeneratePenalty::boxed()),
        regime: Regime::DegeneratePenalty,
        notes: "y restricted to [0,1]^2, where phi_sigma(x) = min{x, 0}".into(),
        x0: vec![1.0],
        y0: vec![0.5, 0.5],
    }
}

pub fn make_hard_instance(spec: HardInstanceSpec) -> SuiteProblem {
    let p = hard_instance::HardInstance::new(spec);
    let q = p.q();
    let g = p.gammas();
    SuiteProblem {
        name: format!("hard_instance_T{}_K{}", spec.t, spec.k),
        notes: format!(
            "q = {q}, beta = {:.6e}; y* = beta 1, phi(x) = (x+1)^2/2; gammas = [{:.4}, {:.4}, {:.4}, {:.4}] measured on a grid",
            p.beta(),
            g[0],
            g[1],
            g[2],
            g[3]
        ),
        problem: Box::new(p),
        regime: Regime::HardInstance,
        x0: vec![0.0],
        y0: vec![0.0; q],
    }
}

/// Registry entries as `(name, regime, one-line description)`.
pub fn list() -> Vec<(&'static str, Regime, &'static str)> {
    vec![
        (
            "quadratic_sc",
            Regime::StronglyConvex,
            "strongly convex quadratic lower level",
        ),
        (
            "kernel_pl",
            Regime::KernelPl,
            "PL lower level with a flat kernel direction",
        ),
        (
            "sin_sq_pl",
            Regime::SinSqPl,
            "nonconvex PL lower level (y-x)^2 + 3 sin^2(y-x)",
        ),
        (
            "discontinuous",
            Regime::Discontinuous,
            "box-constrained lower level, phi jumps at 0",
        ),
        (
            "discontinuous_smoothed",
            Regime::Discontinuous,
            "smoothed surrogate of the box, same jump",
        ),
        (
            "degenerate_penalty",
            Regime::DegeneratePenalty,
            "penalty unbounded below",
        ),
        (
            "degenerate_penalty_boxed",
            Regime::DegeneratePenalty,
            "boxed variant with phi_sigma = min{x,0}",
        ),
        (
            "hard_instance",
            Regime::HardInstance,
            "zero-chain instance; use hard_instance:T,K (default 10,10)",
        ),
    ]
}

/// Builds a problem by registry name.
pub fn lookup(name: &str) -> Result<SuiteProblem> {
    match name {
        "quadratic_sc" => Ok(make_quadratic_sc()),
        "kernel_pl" => Ok(make_kernel_pl()),
        "sin_sq_pl" => Ok(make_sin_sq_pl()),
        "discontinuous" => Ok(make_discontinuous_example(false)),
        "discontinuous_smoothed" => Ok(make_discontinuous_example(true)),
        "degenerate_penalty" => Ok(make_degenerate_penalty_example()),
        "degenerate_penalty_boxed" => Ok(make_degenerate_penalty_boxed()),
        "hard_instance" => Ok(make_hard_instance(HardInstanceSpec::new(10, 10)?)),
        other => {
            if let Some(rest) = other.strip_prefix("hard_instance:") {
                let parsed: Option<(usize, usize)> = rest
                    .split_once(',')
                    .and_then(|(t, k)| Some((t.trim().parse().ok()?, k.trim().parse().ok()?)));
                return match parsed {
                    Some((t, k)) => Ok(make_hard_instance(HardInstanceSpec::new(t, k)?)),
                    None => Err(BilevelError::Config(format!(
                        "cannot parse hard instance budget {rest:?}; expected hard_instance:T,K"
                    ))),
                };
            }
            let known: Vec<&str> = list().iter().map(|e| e.0).collect();
            Err(BilevelError::Config(format!(
                "unknown problem {other:?}; known problems: {}",
                known.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_name_resolves() {
        for (name, regime, _) in list() {
            let s = lookup(name).unwrap();
            assert_eq!(s.regime, regime);
            assert_eq!(s.x0.len(), s.problem.dim_x());
            assert_eq!(s.y0.len(), s.problem.dim_y());
            assert!(s.problem.constants().validate().is_ok(), "{name}");
        }
    }

    #[test]
    fn hard_instance_budget_parses() {
        let s = lookup("hard_instance:3,4").unwrap();
        assert_eq!(s.problem.dim_y(), 24);
        assert!(lookup("hard_instance:3").is_err());
        assert!(lookup("hard_instance:0,4").is_err());
        assert!(matches!(lookup("nope"), Err(BilevelError::Config(_))));
    }
}
