//! Strong and weak error estimators over coupled ensembles.

use super::ensemble::PathResult;
use crate::error::{Error, Result};
use crate::model::State;
use crate::stats::{self, BOOTSTRAP_RESAMPLES};

pub const MIN_COMMON_PATHS: usize = 100;

/// Estimate with bootstrap standard error over the common paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_effective: usize,
    /// Paths dropped because either level diverged.
    pub excluded: usize,
}

fn common_pairs(results: &[PathResult], (i, j): (usize, usize)) -> Result<(Vec<(&State, &State)>, usize)> {
    let pairs: Vec<_> = results
        .iter()
        .filter_map(|r| match (r.terminal.get(i)?, r.terminal.get(j)?) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        })
        .collect();
    if pairs.len() < MIN_COMMON_PATHS {
        return Err(Error::Estimation(format!(
            "levels ({i}, {j}) share {} converged paths, need at least {MIN_COMMON_PATHS}",
            pairs.len()
        )));
    }
    let excluded = results.len() - pairs.len();
    Ok((pairs, excluded))
}

/// `(1/M Σ_j ‖Y_i(T, ω_j) - Y_j(T, ω_j)‖²)^{1/2}`.
pub fn strong_error(results: &[PathResult], pair: (usize, usize), seed: u64) -> Result<ErrorEstimate> {
    let (pairs, excluded) = common_pairs(results, pair)?;
    let sq: Vec<f64> = pairs.iter().map(|(a, b)| a.dist_sq(b)).collect();
    let rms = |xs: &[f64]| stats::mean(xs).sqrt();
    Ok(ErrorEstimate {
        value: rms(&sq),
        std_error: stats::bootstrap_se(&sq, rms, BOOTSTRAP_RESAMPLES, seed),
        n_effective: sq.len(),
        excluded,
    })
}

/// `|1/M Σ_j g(Y_i(T, ω_j)) - g(Y_j(T, ω_j))|`.
pub fn weak_error(
    results: &[PathResult],
    pair: (usize, usize),
    g: impl Fn(&State) -> f64,
    seed: u64,
) -> Result<ErrorEstimate> {
    let (pairs, excluded) = common_pairs(results, pair)?;
    let diff: Vec<f64> = pairs.iter().map(|(a, b)| g(a) - g(b)).collect();
    let abs_mean = |xs: &[f64]| stats::mean(xs).abs();
    Ok(ErrorEstimate {
        value: abs_mean(&diff),
        std_error: stats::bootstrap_se(&diff, abs_mean, BOOTSTRAP_RESAMPLES, seed),
        n_effective: diff.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    /// Coarser step of the compared pair.
    pub h: f64,
    pub strong_error: f64,
    /// `log₂(Err(hᵢ)/Err(hᵢ₊₁))`; absent on the last row.
    pub strong_order: Option<f64>,
    pub weak_error: f64,
    pub weak_order: Option<f64>,
    pub n_effective: usize,
    pub strong_se: f64,
    pub weak_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

fn order(a: f64, b: f64) -> f64 {
    (a / b).log2()
}

impl ErrorTable {
    /// One row per adjacent level pair of `levels`.
    pub fn build(results: &[PathResult], levels: &[f64], g: impl Fn(&State) -> f64, seed: u64) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Estimation("an error table needs at least two levels".into()));
        }
        let mut rows = Vec::with_capacity(levels.len() - 1);
        for i in 0..levels.len() - 1 {
            let s = strong_error(results, (i, i + 1), seed ^ (2 * i as u64))?;
            let w = weak_error(results, (i, i + 1), &g, seed ^ (2 * i as u64 + 1))?;
            rows.push(ErrorRow {
                h: levels[i],
                strong_error: s.value,
                strong_order: None,
                weak_error: w.value,
                weak_order: None,
                n_effective: s.n_effective,
                strong_se: s.std_error,
                weak_se: w.std_error,
            });
        }
        for i in 0..rows.len() - 1 {
            rows[i].strong_order = Some(order(rows[i].strong_error, rows[i + 1].strong_error));
            rows[i].weak_order = Some(order(rows[i].weak_error, rows[i + 1].weak_error));
        }
        Ok(Self { rows })
    }

    fn slope(&self, err: impl Fn(&ErrorRow) -> f64) -> f64 {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.h.log2()).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| err(r).log2()).collect();
        stats::least_squares_slope(&xs, &ys)
    }

    /// Least-squares slope of `log₂ Err_strong` against `log₂ h`.
    pub fn strong_regression_order(&self) -> f64 {
        self.slope(|r| r.strong_error)
    }

    pub fn weak_regression_order(&self) -> f64 {
        self.slope(|r| r.weak_error)
    }

    pub fn mean_weak_order(&self) -> f64 {
        let o: Vec<f64> = self.rows.iter().filter_map(|r| r.weak_order).collect();
        stats::mean(&o)
    }

    pub fn mean_strong_order(&self) -> f64 {
        let o: Vec<f64> = self.rows.iter().filter_map(|r| r.strong_order).collect();
        stats::mean(&o)
    }
}
