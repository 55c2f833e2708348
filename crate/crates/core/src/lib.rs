//! Fully first-order penalty methods for bilevel optimization with a
//! Polyak-Łojasiewicz lower level.
//!
//! The crate provides the deterministic F²BA and stochastic F²BSA solvers
//! ([`drivers`]), their parameter schedules ([`schedule`]), a suite of test
//! problems with closed-form hyper-objectives ([`problems`]), a certification
//! harness for the zero-chain hard instance ([`zerochain`]), and independent
//! reference oracles for checking all of the above ([`diagnostics`]).
//!
//! ```
//! use bilevel_core::problems;
//! use bilevel_core::schedule::{build_schedule, ScheduleOverrides};
//! use bilevel_core::drivers::run_f2ba;
//!
//! let suite = problems::make_kernel_pl();
//! let plan = build_schedule(
//!     suite.problem.constants(),
//!     1e-1,
//!     0.5,
//!     1.0,
//!     &ScheduleOverrides::default(),
//! )
//! .unwrap();
//! let trace = run_f2ba(suite.problem.as_ref(), &plan, &suite.x0, &suite.y0).unwrap();
//! assert!(trace.summary.min_est_norm <= 1e-1);
//! ```

// `!(a > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Probe lists are plain `(x, y)` pair slices.
#![allow(clippy::type_complexity)]

pub mod diagnostics;
pub mod drivers;
pub mod error;
pub mod exec;
pub mod inner;
pub mod linalg;
pub mod oracle;
pub mod penalty;
pub mod problem;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod vecops;
pub mod zerochain;

pub use error::{BilevelError, ErrorCategory, Result};
pub use problem::{BilevelProblem, PenaltySupport, ProblemConstants};
