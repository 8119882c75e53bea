//! Sieve log-likelihood of the FTTM and its analytic gradient.
//!
//! For subject `i` with `u_i = H(Y_i) + beta' x_i + theta' z_i`:
//!
//! ```text
//! l_i = delta_i * (log H'(Y_i) + log f_eps(u_i)) + (1 - delta_i) * log S_eps(u_i)
//! ```
//!
//! Per-subject terms are accumulated sequentially in subject order, so values
//! are bit-reproducible regardless of how many fits run concurrently.

use crate::basis::{bernstein_vector_unchecked, dot, FunctionalQuadrature};
use crate::data::SurvivalDataset;
use crate::error::{FttmError, Result};
use crate::params::{gamma_from_eta, jacobian_transpose_apply, FttmSpec, RawParams};

/// Returned in place of `-inf` so line searches can compare values.
pub const LOGLIK_FLOOR: f64 = -1e300;

/// `beta' x + theta' z`.
pub fn linear_predictor(beta: &[f64], theta: &[f64], x_row: &[f64], z_row: &[f64]) -> Result<f64> {
    if beta.len() != x_row.len() || theta.len() != z_row.len() {
        return Err(FttmError::domain(format!(
            "linear predictor dimensions: beta {} vs x {}, theta {} vs z {}",
            beta.len(),
            x_row.len(),
            theta.len(),
            z_row.len()
        )));
    }
    Ok(dot(beta, x_row) + dot(theta, z_row))
}

/// Fixed, parameter-free pieces of the likelihood for one `(spec, dataset)` pair.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace {
    n: usize,
    p: usize,
    n0: usize,
    n1: usize,
    tau: f64,
    /// `n x (N1 + 1)` functional design.
    pub z: Vec<f64>,
    /// `n x (N0 + 1)` Bernstein vectors at `Y_i / tau`.
    pub b_y: Vec<f64>,
    /// `n x N0` order-`(N0 - 1)` Bernstein vectors at `Y_i / tau`.
    pub b_y_deriv: Vec<f64>,
    x: Vec<f64>,
    delta: Vec<bool>,
}

impl LikelihoodWorkspace {
    pub fn new(spec: &FttmSpec, ds: &SurvivalDataset) -> Result<Self> {
        spec.check()?;
        if ds.p() != spec.p {
            return Err(FttmError::domain(format!(
                "spec expects {} scalar covariates, dataset has {}",
                spec.p,
                ds.p()
            )));
        }
        let n = ds.n();
        if let Some(max) = ds.max_time() {
            if max > spec.tau {
                return Err(FttmError::domain(format!(
                    "tau = {} is below the maximum observed time {max}",
                    spec.tau
                )));
            }
        }
        if ds.y.iter().any(|&y| !(y >= 0.0)) {
            return Err(FttmError::InvalidData("times must be non-negative".into()));
        }
        let quad = FunctionalQuadrature::new(&ds.grid, spec.n1)?;
        let mut z = Vec::with_capacity(n * (spec.n1 + 1));
        let mut b_y = Vec::with_capacity(n * (spec.n0 + 1));
        let mut b_y_deriv = Vec::with_capacity(n * spec.n0);
        let mut x = Vec::with_capacity(n * spec.p);
        for i in 0..n {
            z.extend(quad.design(&ds.xf_row(i))?.0);
            let u = (ds.y[i] / spec.tau).clamp(0.0, 1.0);
            b_y.extend(bernstein_vector_unchecked(u, spec.n0));
            b_y_deriv.extend(bernstein_vector_unchecked(u, spec.n0 - 1));
            x.extend(ds.x.row(i).iter());
        }
        Ok(Self {
            n,
            p: spec.p,
            n0: spec.n0,
            n1: spec.n1,
            tau: spec.tau,
            z,
            b_y,
            b_y_deriv,
            x,
            delta: ds.delta.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        let k = self.n1 + 1;
        &self.z[i * k..(i + 1) * k]
    }

    pub fn b_y_row(&self, i: usize) -> &[f64] {
        let k = self.n0 + 1;
        &self.b_y[i * k..(i + 1) * k]
    }

    pub fn b_y_deriv_row(&self, i: usize) -> &[f64] {
        &self.b_y_deriv[i * self.n0..(i + 1) * self.n0]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn check_spec(&self, spec: &FttmSpec) -> Result<()> {
        if spec.p != self.p || spec.n0 != self.n0 || spec.n1 != self.n1 || spec.tau != self.tau {
            return Err(FttmError::domain("workspace was built for a different spec"));
        }
        Ok(())
    }
}

/// Log-likelihood in the natural `(beta, gamma, theta)` coordinates.
///
/// `increments[k] = gamma[k+1] - gamma[k]`; passing them separately avoids
/// cancellation when they come from `exp(eta)`.
struct Point<'a> {
    beta: &'a [f64],
    gamma: &'a [f64],
    increments: &'a [f64],
    theta: &'a [f64],
}

enum Outcome {
    Value(f64),
    /// Outside the model's support; the caller sees [`LOGLIK_FLOOR`].
    Floor,
}

fn evaluate(
    spec: &FttmSpec,
    ws: &LikelihoodWorkspace,
    pt: &Point<'_>,
    mut grad: Option<&mut [f64]>,
) -> Result<Outcome> {
    let fam = spec.error;
    let slope_scale = spec.n0 as f64 / spec.tau;
    let (gb, gg, gt) = (spec.beta_range(), spec.gamma_range(), spec.theta_range());
    let mut total = 0.0;
    for i in 0..ws.n {
        let x = ws.x_row(i);
        let z = ws.z_row(i);
        let b = ws.b_y_row(i);
        let u = dot(pt.beta, x) + dot(pt.theta, z) + dot(pt.gamma, b);
        let (term, score, h_prime) = if ws.delta[i] {
            let d = ws.b_y_deriv_row(i);
            let h_prime = slope_scale * dot(pt.increments, d);
            if !(h_prime > 0.0) {
                if h_prime.is_nan() {
                    return Err(FttmError::NonFinite { subject: i });
                }
                return Ok(Outcome::Floor);
            }
            (h_prime.ln() + fam.log_density(u), fam.d_log_density(u), h_prime)
        } else {
            (fam.log_survival(u), fam.d_log_survival(u), 0.0)
        };
        if term.is_nan() {
            return Err(FttmError::NonFinite { subject: i });
        }
        if term.is_infinite() {
            return Ok(Outcome::Floor);
        }
        total += term;

        if let Some(g) = grad.as_deref_mut() {
            if !score.is_finite() {
                return Err(FttmError::NonFinite { subject: i });
            }
            for (gj, xj) in g[gb.clone()].iter_mut().zip(x) {
                *gj += score * xj;
            }
            for (gj, zj) in g[gt.clone()].iter_mut().zip(z) {
                *gj += score * zj;
            }
            let g_gamma = &mut g[gg.clone()];
            for (gj, bj) in g_gamma.iter_mut().zip(b) {
                *gj += score * bj;
            }
            if ws.delta[i] {
                let d = ws.b_y_deriv_row(i);
                for (k, dk) in d.iter().enumerate() {
                    let w = slope_scale * dk / h_prime;
                    g_gamma[k + 1] += w;
                    g_gamma[k] -= w;
                }
            }
        }
    }
    if total.is_nan() {
        return Err(FttmError::NonFinite { subject: ws.n });
    }
    Ok(Outcome::Value(total.max(LOGLIK_FLOOR)))
}

fn outcome_value(o: Outcome) -> f64 {
    match o {
        Outcome::Value(v) => v,
        Outcome::Floor => LOGLIK_FLOOR,
    }
}

/// Log-likelihood at the unconstrained parameter `psi`.
pub fn log_likelihood(psi: &RawParams, spec: &FttmSpec, ws: &LikelihoodWorkspace) -> Result<f64> {
    ws.check_spec(spec)?;
    psi.check(spec)?;
    let gamma = gamma_from_eta(&psi.eta);
    let inc: Vec<f64> = psi.eta[1..].iter().map(|e| e.exp()).collect();
    let pt = Point {
        beta: &psi.beta,
        gamma: &gamma,
        increments: &inc,
        theta: &psi.theta,
    };
    evaluate(spec, ws, &pt, None).map(outcome_value)
}

/// Log-likelihood and its gradient with respect to `(beta, eta, theta)`.
pub fn value_and_gradient(
    psi: &RawParams,
    spec: &FttmSpec,
    ws: &LikelihoodWorkspace,
) -> Result<(f64, Vec<f64>)> {
    ws.check_spec(spec)?;
    psi.check(spec)?;
    let gamma = gamma_from_eta(&psi.eta);
    let inc: Vec<f64> = psi.eta[1..].iter().map(|e| e.exp()).collect();
    let pt = Point {
        beta: &psi.beta,
        gamma: &gamma,
        increments: &inc,
        theta: &psi.theta,
    };
    let mut g = vec![0.0; spec.dim()];
    match evaluate(spec, ws, &pt, Some(&mut g))? {
        Outcome::Value(v) => {
            let range = spec.gamma_range();
            let g_eta = jacobian_transpose_apply(&psi.eta, &g[range.clone()]);
            g[range].copy_from_slice(&g_eta);
            Ok((v, g))
        }
        Outcome::Floor => Err(FttmError::NonFinite { subject: ws.n }),
    }
}

/// Gradient with respect to `(beta, eta, theta)`.
pub fn gradient(psi: &RawParams, spec: &FttmSpec, ws: &LikelihoodWorkspace) -> Result<Vec<f64>> {
    value_and_gradient(psi, spec, ws).map(|(_, g)| g)
}

fn natural_point<'a>(spec: &FttmSpec, v: &'a [f64], inc: &'a mut Vec<f64>) -> Point<'a> {
    let gamma = &v[spec.gamma_range()];
    inc.clear();
    inc.extend(gamma.windows(2).map(|w| w[1] - w[0]));
    Point {
        beta: &v[spec.beta_range()],
        gamma,
        increments: inc,
        theta: &v[spec.theta_range()],
    }
}

fn check_natural(spec: &FttmSpec, ws: &LikelihoodWorkspace, v: &[f64]) -> Result<()> {
    ws.check_spec(spec)?;
    if v.len() != spec.dim() {
        return Err(FttmError::domain(format!(
            "expected {} natural parameters, got {}",
            spec.dim(),
            v.len()
        )));
    }
    Ok(())
}

/// Log-likelihood at the flattened natural parameter `(beta, gamma, theta)`.
///
/// `gamma` need not be monotone; points where `H'(Y_i) <= 0` for an event return [`LOGLIK_FLOOR`].
pub fn log_likelihood_natural(spec: &FttmSpec, ws: &LikelihoodWorkspace, v: &[f64]) -> Result<f64> {
    check_natural(spec, ws, v)?;
    let mut inc = Vec::new();
    let pt = natural_point(spec, v, &mut inc);
    evaluate(spec, ws, &pt, None).map(outcome_value)
}

/// Gradient with respect to the natural parameter `(beta, gamma, theta)`.
pub fn gradient_natural(spec: &FttmSpec, ws: &LikelihoodWorkspace, v: &[f64]) -> Result<Vec<f64>> {
    check_natural(spec, ws, v)?;
    let mut inc = Vec::new();
    let pt = natural_point(spec, v, &mut inc);
    let mut g = vec![0.0; spec.dim()];
    match evaluate(spec, ws, &pt, Some(&mut g))? {
        Outcome::Value(_) => Ok(g),
        Outcome::Floor => Err(FttmError::NonFinite { subject: ws.n }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ErrorFamily;
    use nalgebra::DMatrix;

    fn single(y: f64, event: bool) -> SurvivalDataset {
        SurvivalDataset::new(
            vec![y],
            vec![event],
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 2),
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn linear_predictor_examples() {
        assert_eq!(linear_predictor(&[0.0, 0.0], &[0.0], &[3.0, 4.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(linear_predictor(&[1.0, 2.0], &[0.0], &[3.0, 4.0], &[1.0]).unwrap(), 11.0);
        assert!(linear_predictor(&[1.0], &[0.0], &[3.0, 4.0], &[1.0]).is_err());
        // X ≡ 1 gives z_k = 1/(N1+1)
        let grid: Vec<f64> = (0..201).map(|j| j as f64 / 200.0).collect();
        let z = crate::basis::functional_design(&vec![1.0; 201], &grid, 3).unwrap();
        let theta = [0.5, -1.0, 2.0, 0.7];
        let lp = linear_predictor(&[], &theta, &[], &z.0).unwrap();
        assert!((lp - theta.iter().sum::<f64>() / 4.0).abs() < 1e-4);
    }

    #[test]
    fn identity_transformation_event() {
        // H(t) = t with N0 = 1, tau = 2: log f_eps(1) = 1 - e under r = 0.
        let tau = 2.0;
        let spec = FttmSpec::new(1, 0, ErrorFamily::proportional_hazards(), tau, 0).unwrap();
        let ds = single(1.0, true);
        let ws = LikelihoodWorkspace::new(&spec, &ds).unwrap();
        let psi = RawParams {
            beta: vec![],
            eta: vec![0.0, tau.ln()],
            theta: vec![0.0],
        };
        let l = log_likelihood(&psi, &spec, &ws).unwrap();
        assert!((l - (1.0 - std::f64::consts::E)).abs() < 1e-12);
    }

    #[test]
    fn censored_logistic_at_zero() {
        let tau = 2.0;
        let spec = FttmSpec::new(1, 0, ErrorFamily::proportional_odds(), tau, 0).unwrap();
        let ds = single(1.0, false);
        let ws = LikelihoodWorkspace::new(&spec, &ds).unwrap();
        // H(1) = gamma_0 + (gamma_1 - gamma_0) / 2 = 0 with gamma = (-1, 1)
        let psi = RawParams {
            beta: vec![],
            eta: vec![-1.0, 2f64.ln()],
            theta: vec![0.0],
        };
        let l = log_likelihood(&psi, &spec, &ws).unwrap();
        assert!((l - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn workspace_rejects_short_tau() {
        let spec = FttmSpec::new(2, 0, ErrorFamily::proportional_hazards(), 1.0, 0).unwrap();
        assert!(LikelihoodWorkspace::new(&spec, &single(1.5, true)).is_err());
    }

    #[test]
    fn natural_floor_on_negative_slope() {
        let spec = FttmSpec::new(2, 0, ErrorFamily::proportional_hazards(), 2.0, 0).unwrap();
        let ws = LikelihoodWorkspace::new(&spec, &single(1.0, true)).unwrap();
        let v = [1.0, 0.0, -1.0, 0.0];
        assert_eq!(log_likelihood_natural(&spec, &ws, &v).unwrap(), LOGLIK_FLOOR);
        assert!(gradient_natural(&spec, &ws, &v).is_err());
    }

    #[test]
    fn workspace_rows_partition_unity() {
        let spec = FttmSpec::new(9, 2, ErrorFamily::proportional_hazards(), 5.0, 0).unwrap();
        let y = vec![0.1, 1.0, 2.5, 4.9, 5.0];
        let ds = SurvivalDataset::new(
            y,
            vec![true; 5],
            DMatrix::zeros(5, 0),
            DMatrix::zeros(5, 3),
            vec![0.0, 0.5, 1.0],
        )
        .unwrap();
        let ws = LikelihoodWorkspace::new(&spec, &ds).unwrap();
        for i in 0..5 {
            assert!((ws.b_y_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
