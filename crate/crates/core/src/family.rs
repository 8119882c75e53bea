//! Error-distribution families with survival function `exp(-G(e^t))`.
//!
//! Logarithmic class: `G(u) = log(1 + r u) / r` (`r = 0` is the extreme-value
//! law giving proportional hazards, `r = 1` the logistic law giving
//! proportional odds). Box-Cox class: `G(u) = ((1 + u)^rho - 1) / rho`
//! (`rho = 0` is `log(1 + u)`).

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{FttmError, Result};

/// Below this `r` the logarithmic `G` switches to its series expansion when `r u` is small.
const SERIES_R_MAX: f64 = 1e-8;
/// Above this `r e^t` the logarithmic log-survival and log-density use the asymptotic branch.
const LARGE_ARG: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Logarithmic,
    BoxCox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorFamily {
    pub family: FamilyKind,
    pub param: f64,
}

impl fmt::Display for ErrorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            FamilyKind::Logarithmic => write!(f, "logarithmic(r={})", self.param),
            FamilyKind::BoxCox => write!(f, "box-cox(rho={})", self.param),
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl ErrorFamily {
    pub fn new(family: FamilyKind, param: f64) -> Result<Self> {
        if !(param >= 0.0 && param.is_finite()) {
            return Err(FttmError::domain(format!(
                "error family parameter must be finite and >= 0, got {param}"
            )));
        }
        Ok(Self { family, param })
    }

    pub fn logarithmic(r: f64) -> Result<Self> {
        Self::new(FamilyKind::Logarithmic, r)
    }

    pub fn box_cox(rho: f64) -> Result<Self> {
        Self::new(FamilyKind::BoxCox, rho)
    }

    /// Extreme-value errors: the proportional-hazards model.
    pub fn proportional_hazards() -> Self {
        Self {
            family: FamilyKind::Logarithmic,
            param: 0.0,
        }
    }

    /// Logistic errors: the proportional-odds model.
    pub fn proportional_odds() -> Self {
        Self {
            family: FamilyKind::Logarithmic,
            param: 1.0,
        }
    }

    fn is_logistic(&self) -> bool {
        match self.family {
            FamilyKind::Logarithmic => self.param == 1.0,
            FamilyKind::BoxCox => self.param == 0.0,
        }
    }

    /// `G(u)` for `u >= 0`.
    pub fn g_transform(&self, u: f64) -> Result<f64> {
        if u.is_nan() || u < 0.0 {
            return Err(FttmError::domain(format!("G is defined for u >= 0, got {u}")));
        }
        Ok(self.g_unchecked(u))
    }

    fn g_unchecked(&self, u: f64) -> f64 {
        let p = self.param;
        match self.family {
            FamilyKind::Logarithmic => {
                if p == 0.0 {
                    u
                } else if p < SERIES_R_MAX && p * u < 1e-3 {
                    let ru = p * u;
                    u * (1.0 - ru / 2.0 + ru * ru / 3.0)
                } else {
                    (p * u).ln_1p() / p
                }
            }
            FamilyKind::BoxCox => {
                if p == 0.0 {
                    u.ln_1p()
                } else {
                    (p * u.ln_1p()).exp_m1() / p
                }
            }
        }
    }

    /// `log S_eps(t) = -G(e^t)`.
    pub fn log_survival(&self, t: f64) -> f64 {
        let p = self.param;
        match self.family {
            FamilyKind::Logarithmic if p > 0.0 => {
                let w = p * t.exp();
                if w > LARGE_ARG {
                    -(p.ln() + t + ((-t).exp() / p).ln_1p()) / p
                } else {
                    -self.g_unchecked(t.exp())
                }
            }
            FamilyKind::Logarithmic => -t.exp(),
            FamilyKind::BoxCox => {
                let sp = softplus(t);
                if p == 0.0 {
                    -sp
                } else {
                    -(p * sp).exp_m1() / p
                }
            }
        }
    }

    /// `S_eps(t) = exp(-G(e^t))`.
    pub fn survival(&self, t: f64) -> f64 {
        self.log_survival(t).exp()
    }

    /// `log f_eps(t)` with `f_eps = -dS_eps/dt = G'(e^t) e^t exp(-G(e^t))`.
    pub fn log_density(&self, t: f64) -> f64 {
        let p = self.param;
        match self.family {
            FamilyKind::Logarithmic if p > 0.0 => {
                let w = p * t.exp();
                let scale = 1.0 + 1.0 / p;
                if w > LARGE_ARG {
                    t - scale * (p.ln() + t + ((-t).exp() / p).ln_1p())
                } else {
                    t - scale * w.ln_1p()
                }
            }
            FamilyKind::Logarithmic => t - t.exp(),
            FamilyKind::BoxCox => (p - 1.0) * softplus(t) + t + self.log_survival(t),
        }
    }

    /// `d/dt log S_eps(t)`.
    pub fn d_log_survival(&self, t: f64) -> f64 {
        let p = self.param;
        match self.family {
            FamilyKind::Logarithmic if p > 0.0 => -1.0 / ((-t).exp() + p),
            FamilyKind::Logarithmic => -t.exp(),
            FamilyKind::BoxCox => {
                // -G'(v) v with v = e^t, G'(v) = (1 + v)^(rho - 1)
                let sp = softplus(t);
                -((p - 1.0) * sp + t).exp()
            }
        }
    }

    /// `d/dt log f_eps(t)`.
    pub fn d_log_density(&self, t: f64) -> f64 {
        let p = self.param;
        match self.family {
            FamilyKind::Logarithmic if p > 0.0 => 1.0 - (1.0 + p) / ((-t).exp() + p),
            FamilyKind::Logarithmic => 1.0 - t.exp(),
            FamilyKind::BoxCox => {
                // v / (1 + v) is the logistic function of t
                let logistic = 1.0 / (1.0 + (-t).exp());
                (p - 1.0) * logistic + 1.0 + self.d_log_survival(t)
            }
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        self.log_density(t).exp()
    }

    /// Mean of `eps`, computed once per family and cached.
    pub fn mean(&self) -> f64 {
        if self.is_logistic() {
            return 0.0;
        }
        static CACHE: OnceLock<Mutex<HashMap<(FamilyKind, u64), f64>>> = OnceLock::new();
        let key = (self.family, self.param.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(v) = cache.lock().expect("mean cache poisoned").get(&key) {
            return *v;
        }
        let v = self.mean_by_quadrature();
        cache.lock().expect("mean cache poisoned").insert(key, v);
        v
    }

    /// Upper integration limit beyond which the right tail carries no mass at double precision.
    pub(crate) fn right_tail_limit(&self) -> f64 {
        let mut hi = 40.0;
        while hi < 5120.0 && self.log_survival(hi) + hi.ln() > -37.0 {
            hi *= 2.0;
        }
        hi
    }

    fn mean_by_quadrature(&self) -> f64 {
        let hi = self.right_tail_limit();
        let f = |t: f64| t * self.density(t);
        integrate_adaptive(&f, -40.0, hi, 1e-13)
    }

    /// `t` with `S_eps(t) = prob`, by bisection on `[-40, 40]`.
    pub fn survival_quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(FttmError::domain(format!(
                "survival probability must be in (0, 1), got {prob}"
            )));
        }
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        if self.survival(lo) < prob || self.survival(hi) > prob {
            return Err(FttmError::Range {
                value: prob,
                lo: self.survival(hi),
                hi: self.survival(lo),
            });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.survival(mid) > prob {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature over unit-width starting panels.
pub(crate) fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let panels = ((b - a).ceil() as usize).max(1);
    let width = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = lo + width;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = simpson(lo, hi, fa, fm, fb);
            adaptive_step(f, lo, hi, fa, fm, fb, whole, panel_tol, 40)
        })
        .sum()
}
