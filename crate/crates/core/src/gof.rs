//! Nelson–Aalen cumulative hazard of the pseudo residuals and the identity-line diagnostic.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{FttmError, Result};
use crate::inference::Z_95;
use crate::optimize::FttmFit;
use crate::predict::pseudo_residuals;

/// Right-continuous step function; zero before the first knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
}

impl StepFunction {
    fn index(&self, t: f64) -> Option<usize> {
        self.knots.partition_point(|&k| k <= t).checked_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.index(t).map_or(0.0, |i| self.values[i])
    }

    pub fn variance(&self, t: f64) -> f64 {
        self.index(t).map_or(0.0, |i| self.variances[i])
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// `Lambda(t) = sum_{u_j <= t} d_j / n_j` with variance `sum d_j / n_j^2`.
///
/// Subjects censored at an event time remain at risk for that event.
pub fn nelson_aalen(times: &[f64], delta: &[bool]) -> Result<StepFunction> {
    if times.len() != delta.len() {
        return Err(FttmError::domain("times and delta differ in length"));
    }
    if times.iter().any(|t| t.is_nan()) {
        return Err(FttmError::domain("times must not be NaN"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut out = StepFunction {
        knots: vec![],
        values: vec![],
        variances: vec![],
    };
    let (mut cum, mut var) = (0.0, 0.0);
    let mut at_risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0usize;
        while j < order.len() && times[order[j]] == t {
            d += usize::from(delta[order[j]]);
            j += 1;
        }
        if d > 0 {
            let (d, n) = (d as f64, at_risk as f64);
            cum += d / n;
            var += d / (n * n);
            out.knots.push(t);
            out.values.push(cum);
            out.variances.push(var);
        }
        at_risk -= j - i;
        i = j;
    }
    if out.is_empty() {
        log::warn!("Nelson-Aalen: no events; cumulative hazard is identically zero");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub u: f64,
    pub lambda_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Nelson–Aalen estimate of the pseudo residuals at each event knot with linear 95% limits.
///
/// Under a correct model the rows lie near `lambda_hat = u`.
pub fn gof_curve(fit: &FttmFit, ds: &SurvivalDataset) -> Result<Vec<GofRow>> {
    let r = pseudo_residuals(fit, ds)?;
    Ok(gof_rows(&nelson_aalen(&r.u, &r.delta)?))
}

pub fn gof_rows(na: &StepFunction) -> Vec<GofRow> {
    na.knots
        .iter()
        .zip(&na.values)
        .zip(&na.variances)
        .map(|((&u, &l), &v)| {
            let half = Z_95 * v.sqrt();
            GofRow {
                u,
                lambda_hat: l,
                lo: l - half,
                hi: l + half,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofDeviation {
    /// Mean of `|lambda_hat - u|` over knots at or below the cutoff.
    pub mean_abs: f64,
    pub max_abs: f64,
    /// 95th percentile of all pseudo residuals.
    pub cutoff: f64,
    pub knots_used: usize,
}

/// Deviation from the identity line over knots up to the 95th percentile of `residuals`.
pub fn gof_deviation(rows: &[GofRow], residuals: &[f64]) -> Option<GofDeviation> {
    let cutoff = quantile(residuals, 0.95)?;
    let dev: Vec<f64> = rows
        .iter()
        .filter(|r| r.u <= cutoff)
        .map(|r| (r.lambda_hat - r.u).abs())
        .collect();
    if dev.is_empty() {
        return None;
    }
    Some(GofDeviation {
        mean_abs: dev.iter().sum::<f64>() / dev.len() as f64,
        max_abs: dev.iter().copied().fold(0.0, f64::max),
        cutoff,
        knots_used: dev.len(),
    })
}

/// Type-7 (linear interpolation) sample quantile.
pub(crate) fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}
