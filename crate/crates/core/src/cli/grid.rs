use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DevSet;
use crate::llm::Provider;
use crate::scoring::Hyperparams;
use crate::search::{run_search, write_artifacts, Evaluator, SearchConfig};

pub const DEFAULT_AXIS: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub final_f1: Option<f64>,
    pub best_node_size: Option<usize>,
    pub steps_used: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GridRow {
    pub fn ok(alpha: f64, beta: f64, gamma: f64, final_f1: f64, best_node_size: usize, steps_used: u64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            final_f1: Some(final_f1),
            best_node_size: Some(best_node_size),
            steps_used: Some(steps_used),
            error: None,
        }
    }

    pub fn failed(alpha: f64, beta: f64, gamma: f64, error: impl Into<String>) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            final_f1: None,
            best_node_size: None,
            steps_used: None,
            error: Some(error.into()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.final_f1.is_none()
    }

    fn point(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn to_ndjson(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    pub fn from_ndjson(text: &str) -> Result<Self, serde_json::Error> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }

    /// Highest final F1, then smaller bundle, then lexicographically
    /// smallest (alpha, beta, gamma).
    pub fn best(&self) -> Option<&GridRow> {
        self.rows.iter().filter(|r| !r.is_failed()).min_by(|a, b| {
            b.final_f1
                .unwrap()
                .total_cmp(&a.final_f1.unwrap())
                .then(a.best_node_size.cmp(&b.best_node_size))
                .then_with(|| lex(&a.point(), &b.point()))
        })
    }
}

fn lex(a: &[f64; 3], b: &[f64; 3]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Cartesian product of the three axes, alpha varying slowest.
pub fn grid_points(alphas: &[f64], betas: &[f64], gammas: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(alphas.len() * betas.len() * gammas.len());
    for &a in alphas {
        for &b in betas {
            for &g in gammas {
                out.push((a, b, g));
            }
        }
    }
    out
}

pub fn default_grid() -> Vec<(f64, f64, f64)> {
    grid_points(&DEFAULT_AXIS, &DEFAULT_AXIS, &DEFAULT_AXIS)
}

/// Parses a comma-separated axis such as `0.1,0.5,1.0`.
pub fn parse_axis(text: &str) -> Result<Vec<f64>, String> {
    let values = text
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| format!("bad grid value {v:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty grid axis".into());
    }
    Ok(values)
}

fn point_dir(a: f64, b: f64, g: f64) -> String {
    format!("a{a}_b{b}_g{g}")
}

fn run_point(
    base: &SearchConfig,
    (a, b, g): (f64, f64, f64),
    dev: &DevSet,
    provider: &dyn Provider,
    evaluator: &Evaluator,
    out: Option<&Path>,
) -> GridRow {
    let config = SearchConfig {
        hyper: Hyperparams::new(a, b, g),
        ..base.clone()
    };
    match run_search(&config, dev, provider, evaluator) {
        Ok(result) => {
            if let Some(dir) = out {
                let dir = dir.join(point_dir(a, b, g));
                if let Err(e) = write_artifacts(&dir, &result, &config) {
                    log::warn!("could not write artifacts to {}: {e}", dir.display());
                }
            }
            GridRow::ok(a, b, g, result.stats.f1, result.bundle.size(), result.expansions)
        }
        Err(e) => {
            log::warn!("grid point ({a}, {b}, {g}) failed: {e}");
            GridRow::failed(a, b, g, e.to_string())
        }
    }
}

/// One search per point. Points share the evaluator, so contexts and
/// bundle evaluations are computed once across the sweep.
pub fn run_grid(
    base: &SearchConfig,
    points: &[(f64, f64, f64)],
    dev: &DevSet,
    provider: &dyn Provider,
    evaluator: &Evaluator,
    out: Option<&Path>,
    parallel: bool,
) -> GridResult {
    let rows = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = points
                .iter()
                .map(|&p| s.spawn(move || run_point(base, p, dev, provider, evaluator, out)))
                .collect();
            handles
                .into_iter()
                .zip(points)
                .map(|(h, &(a, b, g))| h.join().unwrap_or_else(|_| GridRow::failed(a, b, g, "grid point panicked")))
                .collect()
        })
    } else {
        points
            .iter()
            .map(|&p| run_point(base, p, dev, provider, evaluator, out))
            .collect()
    };
    GridResult { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_27_points_in_order() {
        let g = default_grid();
        assert_eq!(g.len(), 27);
        assert_eq!(g[0], (0.1, 0.1, 0.1));
        assert_eq!(g[1], (0.1, 0.1, 0.5));
        assert_eq!(g[26], (1.0, 1.0, 1.0));
        assert_eq!(grid_points(&[0.1], &[0.1], &[0.1]).len(), 1);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!(parse_axis("0.1, 0.5,1").unwrap(), vec![0.1, 0.5, 1.0]);
        assert!(parse_axis("0.1,x").is_err());
        assert!(parse_axis("-1").is_err());
    }

    #[test]
    fn best_point_tie_breaks() {
        let result = GridResult {
            rows: vec![
                GridRow::ok(0.5, 0.1, 0.1, 0.9, 3, 20),
                GridRow::ok(1.0, 0.1, 0.1, 0.9, 2, 20),
                GridRow::ok(0.1, 0.5, 0.1, 0.9, 2, 20),
                GridRow::failed(0.1, 0.1, 0.1, "boom"),
                GridRow::ok(0.1, 1.0, 0.1, 0.8, 1, 20),
            ],
        };
        let best = result.best().unwrap();
        assert_eq!((best.alpha, best.beta), (0.1, 0.5));
        assert_eq!(GridResult::from_ndjson(&result.to_ndjson()).unwrap(), result);
    }
}
