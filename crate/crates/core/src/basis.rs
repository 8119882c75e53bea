//! Bernstein polynomial bases on `[0, 1]` and `[0, tau]`.
//!
//! `b_k(x, N) = C(N, k) x^k (1 - x)^(N - k)`. The transformation function is
//! `H(t) = sum_k gamma_k b_k(t / tau, N0)` and the functional coefficient is
//! `beta(s) = sum_k theta_k b_k(s, N1)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{FttmError, Result};

/// Above this order binomial coefficients are formed in log space.
const DIRECT_BINOMIAL_MAX_ORDER: usize = 30;

/// Tolerance for points that sit a rounding error outside `[0, 1]`.
const UNIT_SLACK: f64 = 1e-9;

fn check_unit(x: f64) -> Result<f64> {
    if !x.is_finite() || x < -UNIT_SLACK || x > 1.0 + UNIT_SLACK {
        return Err(FttmError::domain(format!("x = {x} outside [0, 1]")));
    }
    Ok(x.clamp(0.0, 1.0))
}

fn binomial_direct(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 1..=k {
        c = c * (n - k + i) as f64 / i as f64;
    }
    c.round()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn bernstein_unchecked(k: usize, n: usize, x: f64) -> f64 {
    if n <= DIRECT_BINOMIAL_MAX_ORDER {
        return binomial_direct(n, k) * x.powi(k as i32) * (1.0 - x).powi((n - k) as i32);
    }
    // Exact zeros at the endpoints; ln(0) would poison the sum.
    if x == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if x == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let log_b = ln_binomial(n, k) + k as f64 * x.ln() + (n - k) as f64 * (-x).ln_1p();
    log_b.exp()
}

/// Single Bernstein basis polynomial `b_k(x, N)`.
pub fn bernstein_eval(k: usize, n: usize, x: f64) -> Result<f64> {
    if k > n {
        return Err(FttmError::domain(format!("basis index {k} exceeds order {n}")));
    }
    let x = check_unit(x)?;
    Ok(bernstein_unchecked(k, n, x))
}

/// All `N + 1` basis polynomials of order `N` at `x`.
pub fn bernstein_vector(x: f64, n: usize) -> Result<Vec<f64>> {
    let x = check_unit(x)?;
    Ok(bernstein_vector_unchecked(x, n))
}

pub(crate) fn bernstein_vector_unchecked(x: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| bernstein_unchecked(k, n, x)).collect()
}

/// A Bernstein basis of a given order on `[0, domain_scale]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernsteinBasis {
    order: usize,
    domain_scale: f64,
}

impl BernsteinBasis {
    pub fn new(order: usize, domain_scale: f64) -> Result<Self> {
        if !(domain_scale > 0.0 && domain_scale.is_finite()) {
            return Err(FttmError::domain(format!(
                "domain scale must be positive, got {domain_scale}"
            )));
        }
        Ok(Self { order, domain_scale })
    }

    /// Basis for the transformation function; a constant `H` has no density, so order ≥ 1.
    pub fn transformation(order: usize, tau: f64) -> Result<Self> {
        if order == 0 {
            return Err(FttmError::domain("transformation basis order must be >= 1"));
        }
        Self::new(order, tau)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn domain_scale(&self) -> f64 {
        self.domain_scale
    }

    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn unit(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 || t > self.domain_scale * (1.0 + UNIT_SLACK) {
            return Err(FttmError::domain(format!(
                "t = {t} outside [0, {}]",
                self.domain_scale
            )));
        }
        Ok((t / self.domain_scale).clamp(0.0, 1.0))
    }

    /// `b_k(t / scale, N)` for every `k`.
    pub fn values(&self, t: f64) -> Result<Vec<f64>> {
        Ok(bernstein_vector_unchecked(self.unit(t)?, self.order))
    }

    /// `b_k(t / scale, N - 1)` for `k < N`; the derivative of an expansion is
    /// `N / scale * sum_k (c_{k+1} - c_k) * b_k(t / scale, N - 1)`.
    pub fn derivative_values(&self, t: f64) -> Result<Vec<f64>> {
        let x = self.unit(t)?;
        if self.order == 0 {
            return Ok(Vec::new());
        }
        Ok(bernstein_vector_unchecked(x, self.order - 1))
    }

    pub fn expand(&self, coef: &[f64], t: f64) -> Result<f64> {
        self.check_len(coef)?;
        Ok(dot(coef, &self.values(t)?))
    }

    pub fn expand_derivative(&self, coef: &[f64], t: f64) -> Result<f64> {
        self.check_len(coef)?;
        let d = self.derivative_values(t)?;
        let slope: f64 = coef
            .windows(2)
            .zip(&d)
            .map(|(w, b)| (w[1] - w[0]) * b)
            .sum();
        Ok(self.order as f64 * slope / self.domain_scale)
    }

    fn check_len(&self, coef: &[f64]) -> Result<()> {
        if coef.len() != self.len() {
            return Err(FttmError::domain(format!(
                "expected {} coefficients, got {}",
                self.len(),
                coef.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn transformation_basis(gamma: &[f64], tau: f64) -> Result<BernsteinBasis> {
    if gamma.len() < 2 {
        return Err(FttmError::domain("need at least two coefficients for H"));
    }
    BernsteinBasis::transformation(gamma.len() - 1, tau)
}

/// `H(t) = sum_k gamma_k b_k(t / tau, N0)`.
pub fn h_eval(gamma: &[f64], tau: f64, t: f64) -> Result<f64> {
    transformation_basis(gamma, tau)?.expand(gamma, t)
}

/// `H'(t) = N0 / tau * sum_{k<N0} (gamma_{k+1} - gamma_k) b_k(t / tau, N0 - 1)`.
pub fn h_deriv_eval(gamma: &[f64], tau: f64, t: f64) -> Result<f64> {
    transformation_basis(gamma, tau)?.expand_derivative(gamma, t)
}

/// Trapezoid weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(FttmError::domain("quadrature grid needs at least two points"));
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(FttmError::domain("quadrature grid has non-finite points"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FttmError::domain("quadrature grid must be strictly increasing"));
    }
    let m = grid.len();
    let mut w = vec![0.0; m];
    for j in 0..m - 1 {
        let half = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += half;
        w[j + 1] += half;
    }
    Ok(w)
}

/// `z_k = ∫ X(s) b_k(s, N1) ds` for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDesignRow(pub Vec<f64>);

impl FunctionalDesignRow {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Precomputed trapezoid-times-basis weights for a fixed grid and order.
///
/// Evaluating `z` for many subjects on a shared grid reduces to one
/// matrix-vector product per subject.
#[derive(Debug, Clone)]
pub struct FunctionalQuadrature {
    order: usize,
    m: usize,
    // row-major m x (order + 1)
    weights: Vec<f64>,
}

impl FunctionalQuadrature {
    pub fn new(grid: &[f64], order: usize) -> Result<Self> {
        let tw = trapezoid_weights(grid)?;
        let k = order + 1;
        let mut weights = Vec::with_capacity(grid.len() * k);
        for (s, w) in grid.iter().zip(&tw) {
            let b = bernstein_vector(*s, order)?;
            weights.extend(b.iter().map(|bk| bk * w));
        }
        Ok(Self {
            order,
            m: grid.len(),
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn design(&self, values: &[f64]) -> Result<FunctionalDesignRow> {
        if values.len() != self.m {
            return Err(FttmError::domain(format!(
                "functional values have length {}, grid has {}",
                values.len(),
                self.m
            )));
        }
        let k = self.order + 1;
        let mut z = vec![0.0; k];
        for (j, v) in values.iter().enumerate() {
            let row = &self.weights[j * k..(j + 1) * k];
            for (zk, w) in z.iter_mut().zip(row) {
                *zk += v * w;
            }
        }
        Ok(FunctionalDesignRow(z))
    }
}

/// Trapezoid-rule projection of one functional observation onto the order-`N1` basis.
pub fn functional_design(values: &[f64], grid: &[f64], n1: usize) -> Result<FunctionalDesignRow> {
    if values.len() != grid.len() {
        return Err(FttmError::domain("values and grid lengths differ"));
    }
    FunctionalQuadrature::new(grid, n1)?.design(values)
}
