//! Right-censored survival data with scalar and functional covariates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FttmError, Result};

/// Censoring fraction above which [`validate`] warns.
const HEAVY_CENSORING: f64 = 0.95;
/// Relative tolerance for the pivoted-QR rank check on `X`.
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub ids: Vec<String>,
    /// Observed times `min(T, C)`.
    pub y: Vec<f64>,
    /// Event indicators `T <= C`.
    pub delta: Vec<bool>,
    pub scalar_names: Vec<String>,
    /// `n x p` scalar covariates.
    pub x: DMatrix<f64>,
    /// `n x m` functional covariate values on `grid`.
    pub xf: DMatrix<f64>,
    /// Observation grid on `[0, 1]`.
    pub grid: Vec<f64>,
    /// Original index range of the grid before rescaling.
    pub grid_range: (f64, f64),
}

impl SurvivalDataset {
    /// Checks shapes only; content problems are reported by [`validate`].
    pub fn new(
        y: Vec<f64>,
        delta: Vec<bool>,
        x: DMatrix<f64>,
        xf: DMatrix<f64>,
        grid: Vec<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if delta.len() != n || x.nrows() != n || xf.nrows() != n {
            return Err(FttmError::InvalidData(format!(
                "row counts differ: y {}, delta {}, x {}, xf {}",
                n,
                delta.len(),
                x.nrows(),
                xf.nrows()
            )));
        }
        if xf.ncols() != grid.len() {
            return Err(FttmError::InvalidData(format!(
                "functional covariate has {} columns but the grid has {} points",
                xf.ncols(),
                grid.len()
            )));
        }
        let p = x.ncols();
        let range = (
            grid.first().copied().unwrap_or(0.0),
            grid.last().copied().unwrap_or(1.0),
        );
        Ok(Self {
            ids: (1..=n).map(|i| i.to_string()).collect(),
            y,
            delta,
            scalar_names: (1..=p).map(|j| format!("x{j}")).collect(),
            x,
            xf,
            grid,
            grid_range: range,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(FttmError::InvalidData("id count differs from row count".into()));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn with_scalar_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(FttmError::InvalidData(
                "scalar name count differs from column count".into(),
            ));
        }
        self.scalar_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn events(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn event_fraction(&self) -> f64 {
        if self.n() == 0 {
            0.0
        } else {
            self.events() as f64 / self.n() as f64
        }
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn xf_row(&self, i: usize) -> Vec<f64> {
        self.xf.row(i).iter().copied().collect()
    }

    pub fn max_time(&self) -> Option<f64> {
        self.y.iter().copied().reduce(f64::max)
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            delta: idx.iter().map(|&i| self.delta[i]).collect(),
            scalar_names: self.scalar_names.clone(),
            x: self.x.select_rows(idx),
            xf: self.xf.select_rows(idx),
            grid: self.grid.clone(),
            grid_range: self.grid_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Finding {
    fn error(code: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code: code.into(),
            message: message.into(),
        }
    }

    fn warning(code: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code: code.into(),
            message: message.into(),
        }
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// Data problems that make the likelihood undefined (errors) or the
/// parameters poorly identified (warnings).
pub fn validate(ds: &SurvivalDataset) -> Vec<Finding> {
    let mut out = Vec::new();
    if ds.n() == 0 {
        out.push(Finding::error("empty", "dataset has no subjects"));
        return out;
    }
    if ds.events() == 0 {
        out.push(Finding::error("no_events", "no events: every subject is censored"));
    }
    if let Some(i) = ds.y.iter().position(|v| !v.is_finite()) {
        out.push(Finding::error(
            "non_finite",
            format!("non-finite time for subject {}", ds.ids[i]),
        ));
    } else if let Some(i) = ds.y.iter().position(|&v| v <= 0.0) {
        out.push(Finding::error(
            "non_positive_time",
            format!("time must be > 0 (subject {})", ds.ids[i]),
        ));
    }
    if ds.x.iter().any(|v| !v.is_finite()) {
        out.push(Finding::error("non_finite", "non-finite scalar covariate value"));
    }
    if ds.xf.iter().any(|v| !v.is_finite()) {
        out.push(Finding::error("non_finite", "non-finite functional covariate value"));
    }
    if ds.grid.len() < 2 {
        out.push(Finding::error("grid", "functional grid needs at least two points"));
    } else if ds.grid.windows(2).any(|w| !(w[1] > w[0])) {
        out.push(Finding::error("grid", "functional grid is not strictly increasing"));
    }
    if ds.p() > 0 && ds.x.iter().all(|v| v.is_finite()) && !full_column_rank(&ds.x) {
        out.push(Finding::warning(
            "rank_deficient",
            "X not full rank: scalar covariates are collinear",
        ));
    }
    let censored = 1.0 - ds.event_fraction();
    if censored > HEAVY_CENSORING {
        out.push(Finding::warning(
            "heavy_censoring",
            format!("censoring fraction {:.1}% exceeds 95%", 100.0 * censored),
        ));
    }
    out
}

fn full_column_rank(x: &DMatrix<f64>) -> bool {
    let (n, p) = x.shape();
    if n < p {
        return false;
    }
    let tol = RANK_TOL * x.norm();
    let r = x.clone().col_piv_qr().r();
    (0..p).all(|i| r[(i, i)].abs() > tol)
}

/// Smallest integer strictly larger than the maximum observed time.
pub fn default_tau(ds: &SurvivalDataset) -> Result<f64> {
    let max = ds
        .max_time()
        .ok_or_else(|| FttmError::domain("cannot choose tau for an empty dataset"))?;
    tau_above(max)
}

pub(crate) fn tau_above(max: f64) -> Result<f64> {
    if !max.is_finite() {
        return Err(FttmError::domain("maximum time is not finite"));
    }
    let c = max.ceil();
    Ok(if c == max { c + 1.0 } else { c })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(y: Vec<f64>, delta: Vec<bool>, x: DMatrix<f64>) -> SurvivalDataset {
        let n = y.len();
        let grid = vec![0.0, 0.5, 1.0];
        SurvivalDataset::new(y, delta, x, DMatrix::from_element(n, 3, 0.3), grid).unwrap()
    }

    #[test]
    fn no_events_is_an_error() {
        let ds = toy(vec![1.0, 2.0], vec![false, false], DMatrix::zeros(2, 0));
        let f = validate(&ds);
        assert!(f.iter().any(|f| f.code == "no_events" && f.severity == Severity::Error));
        assert!(f.iter().any(|f| f.code == "heavy_censoring"));
    }

    #[test]
    fn duplicated_column_warns() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, -0.5, -0.5, 3.0, 3.0]);
        let ds = toy(vec![1.0, 2.0, 3.0, 4.0], vec![true; 4], x);
        let f = validate(&ds);
        assert!(f.iter().any(|f| f.code == "rank_deficient" && f.severity == Severity::Warning));
        assert!(f.iter().any(|f| f.message.contains("X not full rank")));
        assert!(!has_errors(&f));
    }

    #[test]
    fn full_rank_is_clean_and_validate_is_idempotent() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 1.0, -0.5, 0.2, 3.0, 7.0]);
        let ds = toy(vec![1.0, 2.0, 3.0, 4.0], vec![true, false, true, true], x);
        assert!(validate(&ds).is_empty());
        assert_eq!(validate(&ds), validate(&ds));
    }

    #[test]
    fn bad_grid_and_times() {
        let mut ds = toy(vec![1.0, -2.0], vec![true, true], DMatrix::zeros(2, 0));
        ds.grid = vec![0.0, 0.7, 0.5];
        let f = validate(&ds);
        assert!(f.iter().any(|f| f.code == "grid"));
        assert!(f.iter().any(|f| f.code == "non_positive_time"));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let r = SurvivalDataset::new(
            vec![1.0, 2.0],
            vec![true],
            DMatrix::zeros(2, 0),
            DMatrix::zeros(2, 2),
            vec![0.0, 1.0],
        );
        assert!(r.is_err());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_above(7.3).unwrap(), 8.0);
        assert_eq!(tau_above(5.0).unwrap(), 6.0);
        assert_eq!(tau_above(0.2).unwrap(), 1.0);
        let ds = toy(vec![0.4, 3.9, 2.0], vec![true; 3], DMatrix::zeros(3, 0));
        assert_eq!(default_tau(&ds).unwrap(), 4.0);
        let empty = toy(vec![], vec![], DMatrix::zeros(0, 0));
        assert!(default_tau(&empty).is_err());
    }

    #[test]
    fn subset_keeps_rows() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let ds = toy(vec![1.0, 2.0, 3.0], vec![true, false, true], x);
        let s = ds.subset(&[2, 0]);
        assert_eq!(s.y, vec![3.0, 1.0]);
        assert_eq!(s.delta, vec![true, true]);
        assert_eq!(s.x[(0, 0)], 3.0);
        assert_eq!(s.ids, vec!["3".to_string(), "1".to_string()]);
    }
}
