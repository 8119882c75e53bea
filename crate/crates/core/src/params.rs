//! Model specification and the unconstrained parameter vector `psi = (beta, eta, theta)`.
//!
//! Monotonicity of the transformation coefficients is enforced by
//! `gamma_0 = eta_0` and `gamma_k - gamma_{k-1} = exp(eta_k)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FttmError, Result};
use crate::family::ErrorFamily;

/// Minimum gap between consecutive transformation coefficients.
pub const MIN_GAMMA_GAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FttmSpec {
    /// Order of the transformation basis (N0).
    pub n0: usize,
    /// Order of the functional-coefficient basis (N1).
    pub n1: usize,
    pub error: ErrorFamily,
    pub tau: f64,
    /// Number of scalar covariates.
    pub p: usize,
    /// Diagnostic bounds on gamma; reported, not enforced.
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
}

impl FttmSpec {
    pub fn new(n0: usize, n1: usize, error: ErrorFamily, tau: f64, p: usize) -> Result<Self> {
        let spec = Self {
            n0,
            n1,
            error,
            tau,
            p,
            bounds: None,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Result<Self> {
        self.bounds = Some((lower, upper));
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        if self.n0 < 1 {
            return Err(FttmError::domain("N0 must be >= 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(FttmError::domain(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return Err(FttmError::domain("gamma bounds need M_l < M_u"));
            }
        }
        ErrorFamily::new(self.error.family, self.error.param)?;
        Ok(())
    }

    /// `p + N0 + N1 + 2`.
    pub fn dim(&self) -> usize {
        self.p + self.n0 + self.n1 + 2
    }

    pub fn beta_range(&self) -> std::ops::Range<usize> {
        0..self.p
    }

    pub fn gamma_range(&self) -> std::ops::Range<usize> {
        self.p..self.p + self.n0 + 1
    }

    pub fn theta_range(&self) -> std::ops::Range<usize> {
        self.p + self.n0 + 1..self.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
}

impl RawParams {
    pub fn zeros(spec: &FttmSpec) -> Self {
        Self {
            beta: vec![0.0; spec.p],
            eta: vec![0.0; spec.n0 + 1],
            theta: vec![0.0; spec.n1 + 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + self.eta.len() + self.theta.len()
    }

    pub fn check(&self, spec: &FttmSpec) -> Result<()> {
        if self.beta.len() != spec.p || self.eta.len() != spec.n0 + 1 || self.theta.len() != spec.n1 + 1
        {
            return Err(FttmError::domain(format!(
                "parameter blocks ({}, {}, {}) do not match spec ({}, {}, {})",
                self.beta.len(),
                self.eta.len(),
                self.theta.len(),
                spec.p,
                spec.n0 + 1,
                spec.n1 + 1
            )));
        }
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(FttmError::domain("parameters must be finite"));
        }
        Ok(())
    }

    /// Flattened `(beta, eta, theta)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.eta);
        v.extend_from_slice(&self.theta);
        v
    }

    pub fn from_slice(spec: &FttmSpec, v: &[f64]) -> Result<Self> {
        if v.len() != spec.dim() {
            return Err(FttmError::domain(format!(
                "expected {} parameters, got {}",
                spec.dim(),
                v.len()
            )));
        }
        Ok(Self {
            beta: v[spec.beta_range()].to_vec(),
            eta: v[spec.gamma_range()].to_vec(),
            theta: v[spec.theta_range()].to_vec(),
        })
    }

    pub fn gamma(&self) -> Vec<f64> {
        gamma_from_eta(&self.eta)
    }
}

pub fn gamma_from_eta(eta: &[f64]) -> Vec<f64> {
    let mut gamma = Vec::with_capacity(eta.len());
    let mut acc = 0.0;
    for (k, e) in eta.iter().enumerate() {
        acc = if k == 0 { *e } else { acc + e.exp() };
        gamma.push(acc);
    }
    gamma
}

pub fn eta_from_gamma(gamma: &[f64]) -> Result<Vec<f64>> {
    let mut eta = Vec::with_capacity(gamma.len());
    for (k, g) in gamma.iter().enumerate() {
        if !g.is_finite() {
            return Err(FttmError::domain("gamma must be finite"));
        }
        if k == 0 {
            eta.push(*g);
            continue;
        }
        let gap = g - gamma[k - 1];
        if gap < MIN_GAMMA_GAP {
            return Err(FttmError::domain(format!(
                "gamma must be strictly increasing (gap {gap:e} at index {k})"
            )));
        }
        eta.push(gap.ln());
    }
    Ok(eta)
}

/// `d gamma / d eta`: lower triangular, first column ones, `J[k][j] = exp(eta_j)` for `1 <= j <= k`.
pub fn jacobian_gamma_eta(eta: &[f64]) -> DMatrix<f64> {
    let n = eta.len();
    DMatrix::from_fn(n, n, |k, j| {
        if j > k {
            0.0
        } else if j == 0 {
            1.0
        } else {
            eta[j].exp()
        }
    })
}

/// `J' g` without forming `J`: suffix sums scaled by `exp(eta_j)`.
pub fn jacobian_transpose_apply(eta: &[f64], g_gamma: &[f64]) -> Vec<f64> {
    let n = eta.len();
    let mut out = vec![0.0; n];
    let mut suffix = 0.0;
    for j in (0..n).rev() {
        suffix += g_gamma[j];
        out[j] = if j == 0 { suffix } else { eta[j].exp() * suffix };
    }
    out
}
