//! AIC and grid search over basis orders and the error parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{default_tau, SurvivalDataset};
use crate::error::{FttmError, Result};
use crate::family::{ErrorFamily, FamilyKind};
use crate::optimize::{fit, FitOptions, FttmFit};
use crate::params::FttmSpec;

/// `-2 loglik + 2 (p + N0 + N1 + 1)`.
pub fn aic(loglik: f64, p: usize, n0: usize, n1: usize) -> f64 {
    -2.0 * loglik + 2.0 * (p + n0 + n1 + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n0: Vec<usize>,
    pub n1: Vec<usize>,
    /// Error-family parameters (r for logarithmic, rho for Box-Cox).
    pub r: Vec<f64>,
    #[serde(default = "default_family")]
    pub family: FamilyKind,
    /// Defaults to the smallest integer above the largest observed time.
    #[serde(default)]
    pub tau: Option<f64>,
}

fn default_family() -> FamilyKind {
    FamilyKind::Logarithmic
}

impl GridSpec {
    pub fn new(n0: Vec<usize>, n1: Vec<usize>, r: Vec<f64>) -> Self {
        Self {
            n0,
            n1,
            r,
            family: FamilyKind::Logarithmic,
            tau: None,
        }
    }

    /// The simulation grid N0 ∈ {4, 7, 10, 13}, N1 ∈ {3, 5, 7, 9} for a fixed `r`.
    pub fn simulation_default(r: f64) -> Self {
        Self::new(vec![4, 7, 10, 13], vec![3, 5, 7, 9], vec![r])
    }

    pub fn cells(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.n0.len() * self.n1.len() * self.r.len());
        for &a in &self.n0 {
            for &b in &self.n1 {
                for &r in &self.r {
                    out.push((a, b, r));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicRow {
    pub n0: usize,
    pub n1: usize,
    pub r: f64,
    pub aic: f64,
    pub loglik: f64,
    pub converged: bool,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: FttmFit,
    pub table: Vec<AicRow>,
}

/// Fits every `(N0, N1, r)` cell and returns the converged fit with minimum AIC.
///
/// Ties go to the smaller `N0 + N1`, then the smaller `r`, then grid order.
pub fn grid_search(ds: &SurvivalDataset, grid: &GridSpec, opts: &FitOptions) -> Result<GridSearchResult> {
    if grid.n0.is_empty() || grid.n1.is_empty() || grid.r.is_empty() {
        return Err(FttmError::domain("grid search needs non-empty grids"));
    }
    if grid.r.iter().any(|r| !(*r >= 0.0)) {
        return Err(FttmError::domain("error parameters must be >= 0"));
    }
    let tau = match grid.tau {
        Some(t) => t,
        None => default_tau(ds)?,
    };
    let cells = grid.cells();
    let fits: Vec<(AicRow, Option<FttmFit>)> = cells
        .par_iter()
        .map(|&(n0, n1, r)| {
            let attempt = ErrorFamily::new(grid.family, r)
                .and_then(|fam| FttmSpec::new(n0, n1, fam, tau, ds.p()))
                .and_then(|spec| fit(&spec, ds, opts));
            match attempt {
                Ok(f) => (
                    AicRow {
                        n0,
                        n1,
                        r,
                        aic: f.aic,
                        loglik: f.loglik,
                        converged: f.converged,
                        error: None,
                    },
                    Some(f),
                ),
                Err(e) => (
                    AicRow {
                        n0,
                        n1,
                        r,
                        aic: f64::NAN,
                        loglik: f64::NAN,
                        converged: false,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let best_idx = select_best(fits.iter().map(|(row, _)| row));
    let table: Vec<AicRow> = fits.iter().map(|(row, _)| row.clone()).collect();
    match best_idx {
        Some(i) => {
            let best = fits
                .into_iter()
                .nth(i)
                .and_then(|(_, f)| f)
                .expect("selected row has a fit");
            Ok(GridSearchResult { best, table })
        }
        None => Err(FttmError::NoConvergence { table }),
    }
}

fn select_best<'a>(rows: impl Iterator<Item = &'a AicRow>) -> Option<usize> {
    let mut best: Option<(usize, &AicRow)> = None;
    for (i, row) in rows.enumerate() {
        if !row.converged || !row.aic.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => (row.aic, row.n0 + row.n1, row.r) < (b.aic, b.n0 + b.n1, b.r),
        };
        if better {
            best = Some((i, row));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n0: usize, n1: usize, r: f64, aic: f64, converged: bool) -> AicRow {
        AicRow {
            n0,
            n1,
            r,
            aic,
            loglik: -aic / 2.0,
            converged,
            error: None,
        }
    }

    #[test]
    fn aic_examples() {
        assert_eq!(aic(0.0, 2, 9, 4), 32.0);
        assert_eq!(aic(-100.0, 0, 1, 0), 204.0);
    }

    #[test]
    fn selection_rules() {
        let rows = [
            row(4, 3, 0.0, 10.0, true),
            row(7, 3, 0.0, 9.0, false),
            row(4, 5, 0.0, 9.5, true),
        ];
        assert_eq!(select_best(rows.iter()), Some(2));
        // ties: smaller N0 + N1 first, then smaller r, then grid order
        let rows = [
            row(7, 3, 0.0, 9.0, true),
            row(4, 3, 1.0, 9.0, true),
            row(4, 3, 0.0, 9.0, true),
            row(3, 4, 0.0, 9.0, true),
        ];
        assert_eq!(select_best(rows.iter()), Some(2));
        let rows = [row(4, 3, 0.0, f64::NAN, true), row(4, 3, 0.0, 1.0, false)];
        assert_eq!(select_best(rows.iter()), None);
    }

    #[test]
    fn cells_in_grid_order() {
        let g = GridSpec::new(vec![4, 7], vec![3], vec![0.0, 1.0]);
        assert_eq!(g.cells(), vec![(4, 3, 0.0), (4, 3, 1.0), (7, 3, 0.0), (7, 3, 1.0)]);
        assert_eq!(GridSpec::simulation_default(0.0).cells().len(), 16);
    }
}
