use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::GridRow;

#[derive(Debug, Error, PartialEq)]
pub enum RegressError {
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// Change in F1 per one standard deviation of each hyperparameter.
    pub coefficients: Coefficients,
    pub intercept: f64,
    pub r_squared: f64,
    pub rows: usize,
}

const MIN_ROWS: usize = 4;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

fn zscore(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    // population standard deviation
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return None;
    }
    Some(col.iter().map(|v| (v - mean) / sd).collect())
}

/// OLS of final F1 on z-scored alpha, beta, gamma. Failed rows are ignored.
pub fn regress(rows: &[GridRow]) -> Result<RegressionReport, RegressError> {
    let mut points: Vec<[f64; 4]> = rows
        .iter()
        .filter_map(|r| r.final_f1.map(|f| [r.alpha, r.beta, r.gamma, f]))
        .collect();
    // fixed summation order makes the report independent of row order
    points.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    if points.len() < MIN_ROWS {
        return Err(RegressError::DegenerateDesign(format!(
            "{} usable rows, need at least {MIN_ROWS}",
            points.len()
        )));
    }
    let n = points.len();
    let mut columns = Vec::with_capacity(3);
    for (j, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
        let raw: Vec<f64> = points.iter().map(|p| p[j]).collect();
        columns.push(zscore(&raw).ok_or_else(|| RegressError::DegenerateDesign(format!("{name} column is constant")))?);
    }
    let y = DVector::from_iterator(n, points.iter().map(|p| p[3]));
    let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });

    let sv = x.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    if min <= RANK_TOL * max {
        return Err(RegressError::DegenerateDesign("hyperparameter columns are collinear".into()));
    }

    if y.iter().all(|v| *v == y[0]) {
        return Ok(RegressionReport {
            coefficients: Coefficients {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
            },
            intercept: y[0],
            r_squared: 0.0,
            rows: n,
        });
    }

    let xt = x.transpose();
    let beta = (&xt * &x)
        .cholesky()
        .ok_or_else(|| RegressError::DegenerateDesign("normal equations are singular".into()))?
        .solve(&(&xt * &y));
    let residual = &y - &x * &beta;
    let ss_res = residual.norm_squared();
    let y_mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    Ok(RegressionReport {
        coefficients: Coefficients {
            alpha: beta[1],
            beta: beta[2],
            gamma: beta[3],
        },
        intercept: beta[0],
        r_squared: 1.0 - ss_res / ss_tot,
        rows: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::grid::{default_grid, GridRow};

    fn rows(f: impl Fn(f64, f64, f64) -> f64) -> Vec<GridRow> {
        default_grid()
            .into_iter()
            .map(|(a, b, g)| GridRow::ok(a, b, g, f(a, b, g), 1, 1))
            .collect()
    }

    #[test]
    fn constant_f1_gives_zero_fit() {
        let r = regress(&rows(|_, _, _| 0.7)).unwrap();
        assert_eq!((r.coefficients.alpha, r.coefficients.beta, r.coefficients.gamma), (0.0, 0.0, 0.0));
        assert_eq!(r.r_squared, 0.0);
        assert_eq!(r.intercept, 0.7);
    }

    #[test]
    fn identical_hyperparameters_are_degenerate() {
        let same: Vec<GridRow> = (0..6).map(|i| GridRow::ok(0.5, 0.5, 0.5, i as f64 / 10.0, 1, 1)).collect();
        assert!(matches!(regress(&same), Err(RegressError::DegenerateDesign(_))));
        assert!(matches!(regress(&rows(|a, _, _| a)[..3]), Err(RegressError::DegenerateDesign(_))));
    }

    #[test]
    fn collinear_columns_are_degenerate() {
        let r: Vec<GridRow> = [0.1, 0.5, 1.0, 0.3, 0.7]
            .iter()
            .map(|&v| GridRow::ok(v, v, 1.0 - v, v, 1, 1))
            .collect();
        assert!(matches!(regress(&r), Err(RegressError::DegenerateDesign(_))));
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut r = rows(|a, b, g| 0.3 + 0.1 * a - 0.05 * b * b + 0.02 * g * a);
        let forward = regress(&r).unwrap();
        r.reverse();
        r.swap(3, 17);
        assert_eq!(regress(&r).unwrap(), forward);
    }
}
