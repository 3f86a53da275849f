//! Learning-curve statistics, normalization, aggregation and area under the curve.
//!
//! Per-task curves are averaged over seeds with a standard error of the mean.
//! Normalized tasks are aggregated with independent-Gaussian error propagation
//! and summarized by trapezoidal AUC over the shared environment-step grid.

pub mod crossscore;
pub mod svg;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crossscore::{cross_score_study, CrossScoreConfig, CrossScoreRecord, CrossScoreStudy, StudyState};

/// Two-sided 95% normal multiplier.
pub const CI_MULTIPLIER: f64 = 1.96;

/// Evaluation returns of one task: one `(env_step, return)` series per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCurve {
    pub task_id: String,
    pub seeds: Vec<Vec<(f64, f64)>>,
}

/// Mean and standard error on a grid. `se` is `None` where fewer than two seeds exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub task_id: String,
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<Option<f64>>,
    /// Seeds for a task curve; tasks for an aggregate.
    pub count: usize,
}

/// One tidy output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub task_id: String,
    pub env_step: f64,
    pub mean: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// `mean ± 1.96 · se`.
pub fn ci_band(mean: f64, se: f64) -> (f64, f64) {
    (mean - CI_MULTIPLIER * se, mean + CI_MULTIPLIER * se)
}

impl CurveStats {
    pub fn ci(&self, t: usize) -> Option<(f64, f64)> {
        self.se[t].map(|s| ci_band(self.mean[t], s))
    }

    pub fn rows(&self) -> Vec<StatsRow> {
        (0..self.steps.len())
            .map(|t| {
                let ci = self.ci(t);
                StatsRow {
                    task_id: self.task_id.clone(),
                    env_step: self.steps[t],
                    mean: self.mean[t],
                    se: self.se[t],
                    ci_low: ci.map(|c| c.0),
                    ci_high: ci.map(|c| c.1),
                }
            })
            .collect()
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty curve")
    }
}

fn check_series(series: &[(f64, f64)], what: &str) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Format(format!("{what}: empty series")));
    }
    if series.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite(format!("{what} series")));
    }
    if series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Format(format!("{what}: env steps must be strictly increasing")));
    }
    Ok(())
}

/// Piecewise-linear interpolation of `series` at every point of `grid`.
///
/// Grid points outside the series' step range are an error.
pub fn interpolate(series: &[(f64, f64)], grid: &[f64]) -> Result<Vec<f64>> {
    check_series(series, "interpolation")?;
    let (lo, hi) = (series[0].0, series[series.len() - 1].0);
    grid.iter()
        .map(|&x| {
            if x < lo || x > hi {
                return Err(Error::Format(format!(
                    "grid point {x} outside the series range [{lo}, {hi}]"
                )));
            }
            let k = series.partition_point(|p| p.0 < x);
            if series[k].0 == x {
                return Ok(series[k].1);
            }
            let (x0, y0) = series[k - 1];
            let (x1, y1) = series[k];
            Ok(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
        })
        .collect()
}

/// Sorted union of the step grids, restricted to the range every grid covers.
pub fn shared_grid(grids: &[&[f64]]) -> Result<Vec<f64>> {
    if grids.is_empty() || grids.iter().any(|g| g.is_empty()) {
        return Err(Error::Format("no grid to share".into()));
    }
    let lo = grids.iter().map(|g| g[0]).fold(f64::NEG_INFINITY, f64::max);
    let hi = grids.iter().map(|g| g[g.len() - 1]).fold(f64::INFINITY, f64::min);
    if lo > hi {
        return Err(Error::Format(format!(
            "step ranges do not overlap (latest start {lo}, earliest end {hi})"
        )));
    }
    let mut all: Vec<f64> = grids
        .iter()
        .flat_map(|g| g.iter().copied())
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    Ok(all)
}

/// Seed mean, sample standard deviation over `N − 1` and standard error `σ̂/√N`.
pub fn mean_and_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt() / n.sqrt()))
}

/// Per-step seed statistics; seeds are interpolated onto their shared grid first.
pub fn task_mean_and_se(curve: &TaskCurve) -> Result<CurveStats> {
    if curve.seeds.is_empty() {
        return Err(Error::Format(format!("task {}: no seeds", curve.task_id)));
    }
    for s in &curve.seeds {
        check_series(s, &curve.task_id)?;
    }
    let grids: Vec<Vec<f64>> = curve.seeds.iter().map(|s| s.iter().map(|p| p.0).collect()).collect();
    let grid_refs: Vec<&[f64]> = grids.iter().map(Vec::as_slice).collect();
    let steps = shared_grid(&grid_refs)?;
    let per_seed: Vec<Vec<f64>> = curve
        .seeds
        .iter()
        .map(|s| interpolate(s, &steps))
        .collect::<Result<_>>()?;
    let (mean, se) = (0..steps.len())
        .map(|t| {
            let xs: Vec<f64> = per_seed.iter().map(|s| s[t]).collect();
            mean_and_se(&xs)
        })
        .unzip();
    Ok(CurveStats {
        task_id: curve.task_id.clone(),
        steps,
        mean,
        se,
        count: curve.seeds.len(),
    })
}

/// Divides mean and standard error by the fixed constant `c`.
pub fn normalize_curve(stats: &CurveStats, c: f64) -> Result<CurveStats> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!(
            "normalization constant must be positive and finite, got {c}"
        )));
    }
    Ok(CurveStats {
        mean: stats.mean.iter().map(|m| m / c).collect(),
        se: stats.se.iter().map(|s| s.map(|s| s / c)).collect(),
        ..stats.clone()
    })
}

/// Task-mean curve with standard error `(1/T)·sqrt(Σ s̃²)`, on the tasks' shared grid.
pub fn aggregate_curves(tasks: &[CurveStats], task_id: &str) -> Result<CurveStats> {
    if tasks.is_empty() {
        return Err(Error::Format("no tasks to aggregate".into()));
    }
    let grid_refs: Vec<&[f64]> = tasks.iter().map(|t| t.steps.as_slice()).collect();
    let steps = shared_grid(&grid_refs)?;
    let nt = tasks.len() as f64;
    let mut means = Vec::with_capacity(tasks.len());
    let mut ses = Vec::with_capacity(tasks.len());
    for t in tasks {
        let pts = |v: Vec<f64>| t.steps.iter().copied().zip(v).collect::<Vec<_>>();
        means.push(interpolate(&pts(t.mean.clone()), &steps)?);
        ses.push(if t.se.iter().all(Option::is_some) {
            Some(interpolate(
                &pts(t.se.iter().map(|s| s.unwrap_or(0.0)).collect()),
                &steps,
            )?)
        } else {
            None
        });
    }
    let mean = (0..steps.len())
        .map(|k| means.iter().map(|m| m[k]).sum::<f64>() / nt)
        .collect();
    let se = (0..steps.len())
        .map(|k| {
            ses.iter()
                .map(|s| s.as_ref().map(|s| s[k] * s[k]))
                .sum::<Option<f64>>()
                .map(|ss| ss.sqrt() / nt)
        })
        .collect();
    Ok(CurveStats {
        task_id: task_id.to_string(),
        steps,
        mean,
        se,
        count: tasks.len(),
    })
}

/// Trapezoidal integral of `values` over `steps`.
pub fn auc(steps: &[f64], values: &[f64]) -> Result<f64> {
    if steps.len() != values.len() {
        return Err(Error::Dimension {
            context: "auc values",
            expected: steps.len(),
            got: values.len(),
        });
    }
    if steps.len() < 2 {
        return Err(Error::Format("auc needs at least two grid points".into()));
    }
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Format("auc grid must be strictly increasing".into()));
    }
    Ok(steps
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum())
}

/// Average of benchmark-level AUCs, optionally divided by a reference AUC.
pub fn benchmark_auc(aucs: &[f64], reference: Option<f64>) -> Result<f64> {
    if aucs.is_empty() {
        return Err(Error::Format("no benchmark AUCs to average".into()));
    }
    let avg = aucs.iter().sum::<f64>() / aucs.len() as f64;
    match reference {
        None => Ok(avg),
        Some(r) if r > 0.0 && r.is_finite() => Ok(avg / r),
        Some(r) => Err(Error::Config(format!("reference AUC must be positive, got {r}"))),
    }
}

/// `(env_step, eval_return_mean)` pairs of a metrics CSV written by training.
pub fn read_metrics_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        env_step: f64,
        eval_return_mean: f64,
    }
    let rows: Vec<Row> = crate::io::read_csv(path)?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no rows", path.display())));
    }
    Ok(rows.into_iter().map(|r| (r.env_step, r.eval_return_mean)).collect())
}
