//! Support tracking for zero-respecting algorithms on the hard instance.
//!
//! Every gradient request is routed through [`TrackedInstance`], which logs
//! the support of the query point and of the answer. A zero-respecting method
//! may only query points inside the span of what it has already seen, so each
//! call can add at most one new `y` coordinate to the explored set. The
//! certificate checks that, and that `x` and the upper-level tail of `y` stay
//! exactly zero for the whole budget.

use std::cell::RefCell;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{BilevelError, Result};
use crate::oracle::{ExactOracle, FirstOrderOracle, GradKind};
use crate::problem::{BilevelProblem, ProblemConstants};
use crate::problems::hard_instance::{zero_chain_value_grad, HardInstance, HardInstanceSpec};
use crate::schedule::{build_schedule, ScheduleOverrides};

pub use crate::vecops::support;

/// One gradient request as seen by the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub kind: GradKind,
    pub x: Vec<f64>,
    pub point_support: Vec<usize>,
    /// Support of the returned gradient (in `y` space for `∇_y` calls, `x`
    /// space otherwise).
    pub grad_support: Vec<usize>,
    /// `y` coordinates this call added to the explored set.
    pub new_y: Vec<usize>,
    /// The returned gradient when it lives in `x` space.
    pub x_grad: Option<Vec<f64>>,
    /// Whether the query point has a nonzero upper-level tail coordinate.
    pub tail_touched: bool,
}

/// Explored index sets and per-call snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupportTracker {
    pub explored_y: Vec<bool>,
    pub explored_x: Vec<bool>,
    pub calls: Vec<CallRecord>,
}

impl SupportTracker {
    fn new(dx: usize, dy: usize) -> Self {
        Self {
            explored_y: vec![false; dy],
            explored_x: vec![false; dx],
            calls: Vec::new(),
        }
    }

    pub fn explored_y_count(&self) -> usize {
        self.explored_y.iter().filter(|&&b| b).count()
    }

    fn record(&mut self, kind: GradKind, x: &[f64], y: &[f64], grad: &[f64], tail_start: usize) {
        let point_support = support(y);
        let grad_support = support(grad);
        let y_space = matches!(kind, GradKind::FY | GradKind::GY);
        let mut new_y = Vec::new();
        let touched = point_support
            .iter()
            .chain(if y_space { grad_support.iter() } else { [].iter() });
        for &i in touched {
            if !self.explored_y[i] {
                self.explored_y[i] = true;
                new_y.push(i);
            }
        }
        new_y.sort_unstable();
        new_y.dedup();
        for i in support(x) {
            self.explored_x[i] = true;
        }
        if !y_space {
            for &i in &grad_support {
                self.explored_x[i] = true;
            }
        }
        self.calls.push(CallRecord {
            kind,
            x: x.to_vec(),
            tail_touched: point_support.iter().any(|&i| i >= tail_start),
            point_support,
            grad_support,
            new_y,
            x_grad: (!y_space).then(|| grad.to_vec()),
        });
    }
}

/// The hard instance with every gradient call logged.
pub struct TrackedInstance {
    inner: HardInstance,
    tracker: RefCell<SupportTracker>,
}

impl TrackedInstance {
    pub fn new(inner: HardInstance) -> Self {
        let tracker = RefCell::new(SupportTracker::new(1, inner.q()));
        Self { inner, tracker }
    }

    pub fn instance(&self) -> &HardInstance {
        &self.inner
    }

    pub fn call_count(&self) -> u64 {
        self.tracker.borrow().calls.len() as u64
    }

    pub fn into_tracker(self) -> SupportTracker {
        self.tracker.into_inner()
    }

    fn logged(&self, kind: GradKind, x: &[f64], y: &[f64], grad: Vec<f64>) -> Vec<f64> {
        if y.len() == self.inner.q() && x.len() == 1 {
            self.tracker
                .borrow_mut()
                .record(kind, x, y, &grad, self.inner.tail_start());
        }
        grad
    }
}

impl BilevelProblem for TrackedInstance {
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }

    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }

    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.f(x, y)
    }

    fn grad_f_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.logged(GradKind::FX, x, y, self.inner.grad_f_x(x, y))
    }

    fn grad_f_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.logged(GradKind::FY, x, y, self.inner.grad_f_y(x, y))
    }

    fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.g(x, y)
    }

    fn grad_g_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.logged(GradKind::GX, x, y, self.inner.grad_g_x(x, y))
    }

    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.logged(GradKind::GY, x, y, self.inner.grad_g_y(x, y))
    }

    fn constants(&self) -> &ProblemConstants {
        self.inner.constants()
    }

    fn hess_g_yy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.hess_g_yy(x, y)
    }

    fn hess_g_xy(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.hess_g_xy(x, y)
    }

    fn analytic_phi(&self, x: &[f64]) -> Option<f64> {
        self.inner.analytic_phi(x)
    }

    fn analytic_grad_phi(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.analytic_grad_phi(x)
    }

    fn analytic_phi_inf(&self) -> Option<f64> {
        self.inner.analytic_phi_inf()
    }
}

/// An algorithm that can be run against the tracked instance.
pub trait ZeroRespectingAdapter {
    fn name(&self) -> &str;

    /// Raw gradient calls the algorithm makes with `T` outer and `K` inner steps.
    fn declared_calls(&self, t: usize, k: usize) -> u64;

    /// Runs the algorithm and returns `x_0, …, x_T`.
    fn run(&self, instance: &TrackedInstance, t: usize, k: usize) -> Result<Vec<Vec<f64>>>;
}

fn f2ba_on(
    oracle: &mut dyn FirstOrderOracle,
    instance: &TrackedInstance,
    t: usize,
    k: usize,
    y0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let c = instance.constants();
    let ov = ScheduleOverrides {
        k: Some(k),
        t_outer: Some(t),
        sigma: Some(c.sigma_bar),
        ..ScheduleOverrides::default()
    };
    let plan = build_schedule(c, 1e-2, 1.0, 1.0, &ov)?;
    let x0 = [0.0];
    let mut xs = Vec::with_capacity(t + 1);
    let trace = crate::drivers::run_with_oracle(oracle, &plan, &x0, y0, false, &mut |v| xs.push(v.x.to_vec()))?;
    xs.push(trace.final_state.x);
    Ok(xs)
}

/// F²BA with its natural warm start `x₀ = 0`, `y₀ = z₀ = 0` and `σ = σ̄`.
/// Each outer step costs `3K + 3` raw calls: `K` for `z`, `2K` for the
/// penalty gradient in `y`, and `3` for the estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct F2baAdapter;

impl ZeroRespectingAdapter for F2baAdapter {
    fn name(&self) -> &str {
        "f2ba"
    }

    fn declared_calls(&self, t: usize, k: usize) -> u64 {
        (t * (3 * k + 3)) as u64
    }

    fn run(&self, instance: &TrackedInstance, t: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        let mut oracle = ExactOracle::new(instance);
        let y0 = vec![0.0; instance.dim_y()];
        f2ba_on(&mut oracle, instance, t, k, &y0)
    }
}

/// F²BA started with the last coordinate already set, which no
/// zero-respecting method may do.
#[derive(Debug, Clone, Copy, Default)]
pub struct ViolatingAdapter;

impl ZeroRespectingAdapter for ViolatingAdapter {
    fn name(&self) -> &str {
        "f2ba-violating"
    }

    fn declared_calls(&self, t: usize, k: usize) -> u64 {
        F2baAdapter.declared_calls(t, k)
    }

    fn run(&self, instance: &TrackedInstance, t: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        let mut oracle = ExactOracle::new(instance);
        let mut y0 = vec![0.0; instance.dim_y()];
        let q = y0.len();
        y0[q - 1] = 1.0;
        f2ba_on(&mut oracle, instance, t, k, &y0)
    }
}

/// Oracle that answers `∇_y g` from an untracked copy of the instance.
struct BypassOracle<'a> {
    tracked: ExactOracle<'a>,
    shadow: &'a HardInstance,
}

impl FirstOrderOracle for BypassOracle<'_> {
    fn problem(&self) -> &dyn BilevelProblem {
        self.tracked.problem()
    }

    fn grad_y_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.shadow.grad_g_y(x, y))
    }

    fn grad_y_penalty(&mut self, x: &[f64], y: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.tracked.grad_y_penalty(x, y, sigma)
    }

    fn grad_x_f(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.tracked.grad_x_f(x, y)
    }

    fn grad_x_g(&mut self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.tracked.grad_x_g(x, y)
    }

    fn samples_per_call(&self) -> u64 {
        1
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// F²BA whose `z` sequence bypasses the tracker.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeakyAdapter;

impl ZeroRespectingAdapter for LeakyAdapter {
    fn name(&self) -> &str {
        "f2ba-leaky"
    }

    fn declared_calls(&self, t: usize, k: usize) -> u64 {
        F2baAdapter.declared_calls(t, k)
    }

    fn run(&self, instance: &TrackedInstance, t: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        let shadow = instance.instance().clone();
        let mut oracle = BypassOracle {
            tracked: ExactOracle::new(instance),
            shadow: &shadow,
        };
        let y0 = vec![0.0; instance.dim_y()];
        f2ba_on(&mut oracle, instance, t, k, &y0)
    }
}

/// Outcome of one certification run.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub adapter: String,
    pub spec: HardInstanceSpec,
    pub q: usize,
    /// `x_0, …, x_T`.
    pub x_values: Vec<f64>,
    /// Explored `y` coordinates after each call.
    pub support_trajectory: Vec<usize>,
    pub oracle_calls: u64,
    pub declared_calls: u64,
    /// (i) every `x_t` is `+0.0` bit for bit.
    pub x_stays_zero: bool,
    /// (ii) no queried point has a nonzero coordinate in the upper-level tail.
    pub tail_stays_zero: bool,
    /// (iii) no call grows the explored `y` set by more than one index.
    pub growth_at_most_one: bool,
    pub max_growth: usize,
    /// First call (0-based) violating (iii).
    pub first_violation: Option<usize>,
    /// `∇_x f` returned exactly zero on every call.
    pub grad_x_f_zero: bool,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.x_stays_zero && self.tail_stays_zero && self.growth_at_most_one
    }

    /// Names of the failed checks.
    pub fn failed_checks(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.x_stays_zero {
            out.push("(i) x_t = 0");
        }
        if !self.tail_stays_zero {
            out.push("(ii) tail of y = 0");
        }
        if !self.growth_at_most_one {
            out.push("(iii) support growth <= 1");
        }
        out
    }

    pub fn render(&self) -> String {
        let mark = |b: bool| if b { "PASS" } else { "FAIL" };
        let mut s = String::new();
        let _ = writeln!(s, "adapter        : {}", self.adapter);
        let _ = writeln!(s, "T, K, q        : {}, {}, {}", self.spec.t, self.spec.k, self.q);
        let _ = writeln!(
            s,
            "oracle calls   : {} (declared {})",
            self.oracle_calls, self.declared_calls
        );
        let _ = writeln!(
            s,
            "explored y     : {} of {}",
            self.support_trajectory.last().copied().unwrap_or(0),
            self.q
        );
        let _ = writeln!(
            s,
            "x_T            : {:e}",
            self.x_values.last().copied().unwrap_or(f64::NAN)
        );
        let _ = writeln!(s, "(i)   x_t = 0 for t <= T          : {}", mark(self.x_stays_zero));
        let _ = writeln!(s, "(ii)  y tail q/2+1..q exactly 0   : {}", mark(self.tail_stays_zero));
        let _ = writeln!(
            s,
            "(iii) support growth <= 1 per call : {} (max {}{})",
            mark(self.growth_at_most_one),
            self.max_growth,
            self.first_violation
                .map_or(String::new(), |c| format!(", first at call {c}"))
        );
        let _ = writeln!(s, "grad_x f = 0 at every call       : {}", mark(self.grad_x_f_zero));
        let _ = writeln!(s, "result         : {}", mark(self.passed()));
        s
    }

    pub const SUMMARY_HEADER: &'static str =
        "adapter,T,K,q,oracle_calls,declared_calls,x_zero,tail_zero,growth_ok,max_growth,grad_x_f_zero,passed";

    pub fn summary_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.adapter,
            self.spec.t,
            self.spec.k,
            self.q,
            self.oracle_calls,
            self.declared_calls,
            self.x_stays_zero,
            self.tail_stays_zero,
            self.growth_at_most_one,
            self.max_growth,
            self.grad_x_f_zero,
            self.passed()
        )
    }
}

/// Runs `adapter` on the hard instance for `spec` and certifies the three
/// checks. A call count that differs from the adapter's declared budget means
/// some request bypassed the tracker and is reported as an error.
pub fn run_zero_respecting(adapter: &dyn ZeroRespectingAdapter, spec: HardInstanceSpec) -> Result<CertificationReport> {
    let tracked = TrackedInstance::new(HardInstance::new(spec));
    let xs = adapter.run(&tracked, spec.t, spec.k)?;
    let declared = adapter.declared_calls(spec.t, spec.k);
    let calls = tracked.call_count();
    if calls != declared {
        return Err(BilevelError::Instrumentation(format!(
            "adapter {} made {calls} tracked oracle calls but declares {declared}; some calls bypassed the tracker",
            adapter.name()
        )));
    }
    let q = tracked.instance().q();
    let tracker = tracked.into_tracker();
    let x_values: Vec<f64> = xs.iter().map(|x| x[0]).collect();
    let x_stays_zero = xs.iter().all(|x| x.iter().all(|v| v.to_bits() == 0));
    let tail_stays_zero = tracker.calls.iter().all(|c| !c.tail_touched);
    let growth: Vec<usize> = tracker.calls.iter().map(|c| c.new_y.len()).collect();
    let max_growth = growth.iter().copied().max().unwrap_or(0);
    let first_violation = growth.iter().position(|&g| g > 1);
    let grad_x_f_zero = tracker
        .calls
        .iter()
        .filter(|c| c.kind == GradKind::FX)
        .all(|c| c.x_grad.as_ref().is_some_and(|g| g.iter().all(|v| *v == 0.0)));
    let mut explored = 0;
    let support_trajectory = growth
        .iter()
        .map(|g| {
            explored += g;
            explored
        })
        .collect();
    Ok(CertificationReport {
        adapter: adapter.name().to_string(),
        spec,
        q,
        x_values,
        support_trajectory,
        oracle_calls: calls,
        declared_calls: declared,
        x_stays_zero,
        tail_stays_zero,
        growth_at_most_one: first_violation.is_none(),
        max_growth,
        first_violation,
        grad_x_f_zero,
    })
}

/// Checks that `grad_fn` is a first-order zero-chain on `R^q`: for every
/// prefix length `j = 0..q−1` and `trials` random magnitudes, an input
/// supported on the first `j` coordinates has a gradient supported on the
/// first `j + 1`.
pub fn verify_support_lemma_with(
    q: usize,
    grad_fn: &dyn Fn(&[f64]) -> Vec<f64>,
    trials: usize,
    rng: &mut impl Rng,
) -> bool {
    for j in 0..q {
        for _ in 0..trials.max(1) {
            let mut z = vec![0.0; q];
            for v in z.iter_mut().take(j) {
                let m: f64 = rng.random_range(0.1..2.0);
                *v = if rng.random::<bool>() { m } else { -m };
            }
            let g = grad_fn(&z);
            if support(&g).iter().any(|&i| i > j) {
                return false;
            }
        }
    }
    true
}

/// [`verify_support_lemma_with`] on the zero-chain `h_q`, 100 random
/// prefixes per length.
pub fn verify_support_lemma(q: usize) -> Result<bool> {
    if q < 2 {
        return Err(BilevelError::Input(format!("support lemma needs q >= 2, got {q}")));
    }
    let mut rng = crate::rng::substream(0x5eed, 0);
    let grad = |z: &[f64]| zero_chain_value_grad(q, z).map(|r| r.1).unwrap_or_default();
    Ok(verify_support_lemma_with(q, &grad, 100, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f2ba_certifies_at_small_scale() {
        for (t, k) in [(2, 2), (5, 5)] {
            let r = run_zero_respecting(&F2baAdapter, HardInstanceSpec::new(t, k).unwrap()).unwrap();
            assert!(r.passed(), "{}", r.render());
            assert!(r.grad_x_f_zero);
            assert_eq!(r.x_values.len(), t + 1);
            assert_eq!(r.oracle_calls, (t * (3 * k + 3)) as u64);
            assert!(*r.support_trajectory.last().unwrap() <= r.q / 2);
        }
    }

    #[test]
    fn violating_start_fails_growth_check() {
        let r = run_zero_respecting(&ViolatingAdapter, HardInstanceSpec::new(3, 3).unwrap()).unwrap();
        assert!(!r.growth_at_most_one);
        assert!(!r.passed());
        assert_eq!(r.first_violation, Some(0));
        assert!(r.failed_checks().contains(&"(iii) support growth <= 1"));
    }

    #[test]
    fn bypass_is_instrumentation_error() {
        let e = run_zero_respecting(&LeakyAdapter, HardInstanceSpec::new(2, 2).unwrap()).unwrap_err();
        assert!(matches!(e, BilevelError::Instrumentation(_)), "{e:?}");
    }

    #[test]
    fn support_lemma_on_chain() {
        assert!(verify_support_lemma(2).unwrap());
        assert!(verify_support_lemma(32).unwrap());
        assert!(verify_support_lemma(1).is_err());
    }

    #[test]
    fn coupled_chain_is_detected() {
        let q = 8;
        let coupled = |z: &[f64]| {
            let mut g = zero_chain_value_grad(q, z).unwrap().1;
            // gradient of z₁z₃
            g[0] += z[2];
            g[2] += z[0];
            g
        };
        let mut rng = crate::rng::substream(1, 0);
        assert!(!verify_support_lemma_with(q, &coupled, 10, &mut rng));
    }

    #[test]
    fn summary_row_matches_header() {
        let r = run_zero_respecting(&F2baAdapter, HardInstanceSpec::new(1, 1).unwrap()).unwrap();
        assert_eq!(
            r.summary_row().split(',').count(),
            CertificationReport::SUMMARY_HEADER.split(',').count()
        );
    }
}
