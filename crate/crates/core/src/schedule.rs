//! Step sizes, penalty, inner budgets and horizons for F²BA and F²BSA.
//!
//! Every rate constant is explicit (`c_*`, default 1):
//!
//! ```text
//! ℓ = max{C_f, L_f, L_g, ρ_g},  κ = ℓ/μ
//! σ = min{c_σ R/κ, c_σ ε/(ℓκ³), L_g/L_f, ρ_g/ρ_f, σ̄}
//! η = c_η / (ℓκ³),   τ = 1 / (σ L_f + L_g)
//! K = max(1, ⌈c_K (L_g/μ) ln(L_g/(μσ))⌉)
//! δ₀ = c_δ R,        T = ⌈c_T · 2(Δ + δ₀) / (η ε²)⌉
//! B = ⌈c_B L_g (σ² M_f² + M_g²) / (μ σ² ε²)⌉   (0 = full gradients when M_f = M_g = 0)
//! K_t = max(⌈c_K (L_g/μ) ln(L_g³ δ_t / (μ σ² ε²))⌉, K_min),  K_min = ⌈(2L_g/μ) ln(8L_g/μ)⌉
//! ```

use crate::error::{BilevelError, Result};
use crate::problem::ProblemConstants;

/// How F²BSA picks its per-iteration inner budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KRule {
    /// Use `k` at every iteration.
    Fixed,
    /// `K_t` from the current `δ_t`.
    Adaptive,
}

impl KRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            KRule::Fixed => "fixed",
            KRule::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePlan {
    pub epsilon: f64,
    /// `Δ ≈ φ(x₀) − inf φ`.
    pub delta_big: f64,
    /// `R ≈ dist²(y₀, Y*(x₀))`.
    pub r_init: f64,
    pub eta: f64,
    pub sigma: f64,
    pub tau: f64,
    pub k: usize,
    pub k_min: usize,
    pub k_rule: KRule,
    pub t_outer: usize,
    /// Mini-batch size; 0 means full gradients.
    pub batch: usize,
    pub delta0: f64,
    pub c_eta: f64,
    pub c_sigma: f64,
    pub c_k: f64,
    pub c_b: f64,
    pub c_delta: f64,
    pub c_t: f64,
    pub constants: ProblemConstants,
    /// Where `Δ` and `R` came from (analytic, pre-solve, override).
    pub delta_source: String,
    pub r_source: String,
}

/// Replaces any computed field of a plan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleOverrides {
    /// `Δ` and `R` replace the estimates made by the caller.
    pub delta_big: Option<f64>,
    pub r_init: Option<f64>,
    pub eta: Option<f64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub k: Option<usize>,
    pub t_outer: Option<usize>,
    pub batch: Option<usize>,
    pub delta0: Option<f64>,
    pub c_eta: Option<f64>,
    pub c_sigma: Option<f64>,
    pub c_k: Option<f64>,
    pub c_b: Option<f64>,
    pub c_delta: Option<f64>,
    pub c_t: Option<f64>,
}

impl ScheduleOverrides {
    /// Sets a field by its plan key; used by config files and env overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let real = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| BilevelError::Config(format!("override {key} = {v:?} is not a number")))
        };
        let int = |v: &str| -> Result<usize> {
            v.trim()
                .parse::<usize>()
                .map_err(|_| BilevelError::Config(format!("override {key} = {v:?} is not a nonnegative integer")))
        };
        match key {
            "Delta" | "delta_big" => self.delta_big = Some(real(value)?),
            "R" | "r_init" => self.r_init = Some(real(value)?),
            "eta" => self.eta = Some(real(value)?),
            "sigma" => self.sigma = Some(real(value)?),
            "tau" => self.tau = Some(real(value)?),
            "K" | "k" => self.k = Some(int(value)?),
            "T" | "t_outer" => self.t_outer = Some(int(value)?),
            "B" | "batch" => self.batch = Some(int(value)?),
            "delta0" => self.delta0 = Some(real(value)?),
            "c_eta" => self.c_eta = Some(real(value)?),
            "c_sigma" => self.c_sigma = Some(real(value)?),
            "c_K" | "c_k" => self.c_k = Some(real(value)?),
            "c_B" | "c_b" => self.c_b = Some(real(value)?),
            "c_delta" => self.c_delta = Some(real(value)?),
            "c_T" | "c_t" => self.c_t = Some(real(value)?),
            other => {
                return Err(BilevelError::Config(format!("unknown schedule field {other:?}")));
            }
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(BilevelError::Config(format!(
            "{name} = {v} must be positive and finite"
        )))
    }
}

fn ceil_count(name: &str, v: f64) -> Result<usize> {
    if !v.is_finite() || v > 1e15 {
        return Err(BilevelError::Config(format!(
            "{name} = {v:e} is not a usable iteration count; adjust the schedule constants"
        )));
    }
    Ok(v.ceil().max(0.0) as usize)
}

/// Builds the plan for target stationarity `epsilon`.
///
/// `delta_big` and `r_init` are used as given; the `delta_big`/`r_init`
/// fields of `ov` are for callers that estimate them (see
/// [`crate::drivers::plan_for`]).
pub fn build_schedule(
    constants: &ProblemConstants,
    epsilon: f64,
    delta_big: f64,
    r_init: f64,
    ov: &ScheduleOverrides,
) -> Result<SchedulePlan> {
    constants.validate()?;
    positive("epsilon", epsilon)?;
    if !(delta_big >= 0.0) || !delta_big.is_finite() {
        return Err(BilevelError::Config(format!(
            "Delta = {delta_big} must be finite and nonnegative"
        )));
    }
    if !(r_init >= 0.0) || !r_init.is_finite() {
        return Err(BilevelError::Config(format!(
            "R = {r_init} must be finite and nonnegative"
        )));
    }
    let c_eta = positive("c_eta", ov.c_eta.unwrap_or(1.0))?;
    let c_sigma = positive("c_sigma", ov.c_sigma.unwrap_or(1.0))?;
    let c_k = positive("c_K", ov.c_k.unwrap_or(1.0))?;
    let c_b = positive("c_B", ov.c_b.unwrap_or(1.0))?;
    let c_delta = positive("c_delta", ov.c_delta.unwrap_or(1.0))?;
    let c_t = positive("c_T", ov.c_t.unwrap_or(1.0))?;

    let c = constants;
    let ell = c.ell();
    let kappa = c.kappa();
    let sigma = match ov.sigma {
        Some(s) => s,
        None => (c_sigma * r_init / kappa)
            .min(c_sigma * epsilon / (ell * kappa.powi(3)))
            .min(c.lg_over_lf())
            .min(c.rhog_over_rhof())
            .min(c.sigma_bar),
    };
    if !(sigma > 0.0 && sigma <= c.sigma_bar) {
        return Err(BilevelError::Config(format!(
            "penalty sigma = {sigma} must lie in (0, sigma_bar = {}]; R = 0 forces sigma = 0, override R or sigma",
            c.sigma_bar
        )));
    }
    let eta = positive("eta", ov.eta.unwrap_or(c_eta / (ell * kappa.powi(3))))?;
    let tau = positive("tau", ov.tau.unwrap_or(1.0 / (sigma * c.l_f + c.l_g)))?;
    let lg_mu = c.l_g / c.mu;
    let k = match ov.k {
        Some(k) => k,
        None => ceil_count("K", c_k * lg_mu * (c.l_g / (c.mu * sigma)).ln())?.max(1),
    };
    let k_min = ceil_count("K_min", 2.0 * lg_mu * (8.0 * lg_mu).ln())?.max(1);
    let delta0 = ov.delta0.unwrap_or(c_delta * r_init);
    if !(delta0 >= 0.0) || !delta0.is_finite() {
        return Err(BilevelError::Config(format!(
            "delta0 = {delta0} must be finite and nonnegative"
        )));
    }
    let t_outer = match ov.t_outer {
        Some(t) => t,
        None => ceil_count("T", c_t * 2.0 * (delta_big + delta0) / (eta * epsilon * epsilon))?,
    };
    let batch = match ov.batch {
        Some(b) => b,
        None if c.is_deterministic() => 0,
        None => {
            let num = c.l_g * (sigma * sigma * c.m_f * c.m_f + c.m_g * c.m_g);
            ceil_count("B", c_b * num / (c.mu * sigma * sigma * epsilon * epsilon))?.max(1)
        }
    };
    let k_rule = if ov.k.is_some() { KRule::Fixed } else { KRule::Adaptive };
    Ok(SchedulePlan {
        epsilon,
        delta_big,
        r_init,
        eta,
        sigma,
        tau,
        k,
        k_min,
        k_rule,
        t_outer,
        batch,
        delta0,
        c_eta,
        c_sigma,
        c_k,
        c_b,
        c_delta,
        c_t,
        constants: constants.clone(),
        delta_source: "given".into(),
        r_source: "given".into(),
    })
}

impl SchedulePlan {
    /// Samples per oracle call: `B`, or 1 for full gradients.
    pub fn batch_eff(&self) -> u64 {
        self.batch.max(1) as u64
    }

    pub fn is_stochastic(&self) -> bool {
        self.batch > 0
    }

    /// Inner budget for F²BSA at the current `δ_t`.
    pub fn k_for_delta(&self, delta_t: f64) -> usize {
        if self.k_rule == KRule::Fixed {
            return self.k;
        }
        let c = &self.constants;
        let arg = c.l_g.powi(3) * delta_t / (c.mu * self.sigma * self.sigma * self.epsilon * self.epsilon);
        let raw = self.c_k * (c.l_g / c.mu) * arg.ln();
        let k = if raw.is_finite() && raw > 0.0 {
            raw.ceil().min(1e9) as usize
        } else {
            0
        };
        k.max(self.k_min)
    }

    /// `δ_{t+1} = ½δ_t + (8L_g²/μ²)‖x_{t+1} − x_t‖² + c_δ σ²ε²/L_g²`.
    pub fn next_delta(&self, delta_t: f64, step_sq: f64) -> f64 {
        let c = &self.constants;
        0.5 * delta_t
            + 8.0 * c.l_g * c.l_g / (c.mu * c.mu) * step_sq
            + self.c_delta * self.sigma * self.sigma * self.epsilon * self.epsilon / (c.l_g * c.l_g)
    }

    /// Every field as `(key, value)`, numbers at full precision.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let r = |v: f64| format!("{v:.16e}");
        let c = &self.constants;
        vec![
            ("epsilon".into(), r(self.epsilon)),
            ("Delta".into(), r(self.delta_big)),
            ("Delta_source".into(), self.delta_source.clone()),
            ("R".into(), r(self.r_init)),
            ("R_source".into(), self.r_source.clone()),
            ("eta".into(), r(self.eta)),
            ("sigma".into(), r(self.sigma)),
            ("tau".into(), r(self.tau)),
            ("K".into(), self.k.to_string()),
            ("K_min".into(), self.k_min.to_string()),
            ("K_rule".into(), self.k_rule.as_str().into()),
            ("T".into(), self.t_outer.to_string()),
            ("B".into(), self.batch.to_string()),
            ("delta0".into(), r(self.delta0)),
            ("c_eta".into(), r(self.c_eta)),
            ("c_sigma".into(), r(self.c_sigma)),
            ("c_K".into(), r(self.c_k)),
            ("c_B".into(), r(self.c_b)),
            ("c_delta".into(), r(self.c_delta)),
            ("c_T".into(), r(self.c_t)),
            ("C_f".into(), r(c.c_f)),
            ("L_f".into(), r(c.l_f)),
            ("L_g".into(), r(c.l_g)),
            ("rho_f".into(), r(c.rho_f)),
            ("rho_g".into(), r(c.rho_g)),
            ("mu".into(), r(c.mu)),
            ("sigma_bar".into(), r(c.sigma_bar)),
            ("M_f".into(), r(c.m_f)),
            ("M_g".into(), r(c.m_g)),
        ]
    }

    /// Inverse of [`Self::to_pairs`]; every key must be present exactly once.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        use std::collections::HashMap;
        let mut map: HashMap<&str, &str> = HashMap::new();
        for (k, v) in pairs {
            if map.insert(k.as_str(), v.as_str()).is_some() {
                return Err(BilevelError::Config(format!("duplicate plan key {k:?}")));
            }
        }
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| BilevelError::Config(format!("plan key {k:?} missing")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| BilevelError::Config(format!("plan key {k:?} is not a number")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|_| BilevelError::Config(format!("plan key {k:?} is not an integer")))
        };
        let k_rule = match get("K_rule")? {
            "fixed" => KRule::Fixed,
            "adaptive" => KRule::Adaptive,
            other => return Err(BilevelError::Config(format!("unknown K rule {other:?}"))),
        };
        Ok(SchedulePlan {
            epsilon: real("epsilon")?,
            delta_big: real("Delta")?,
            r_init: real("R")?,
            eta: real("eta")?,
            sigma: real("sigma")?,
            tau: real("tau")?,
            k: int("K")?,
            k_min: int("K_min")?,
            k_rule,
            t_outer: int("T")?,
            batch: int("B")?,
            delta0: real("delta0")?,
            c_eta: real("c_eta")?,
            c_sigma: real("c_sigma")?,
            c_k: real("c_K")?,
            c_b: real("c_B")?,
            c_delta: real("c_delta")?,
            c_t: real("c_T")?,
            constants: ProblemConstants {
                c_f: real("C_f")?,
                l_f: real("L_f")?,
                l_g: real("L_g")?,
                rho_f: real("rho_f")?,
                rho_g: real("rho_g")?,
                mu: real("mu")?,
                sigma_bar: real("sigma_bar")?,
                m_f: real("M_f")?,
                m_g: real("M_g")?,
            },
            delta_source: get("Delta_source")?.to_string(),
            r_source: get("R_source")?.to_string(),
        })
    }
}
