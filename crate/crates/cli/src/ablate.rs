//! Ablation axes: each expands a base configuration into named variants.

use std::path::Path;

use anyhow::{bail, Result};
use etdmpc::analysis::{auc, svg, task_mean_and_se, TaskCurve};
use etdmpc::config::{reanalyze_interval_for_utd, RunConfig};
use etdmpc::replay::InsertMode;
use etdmpc::returns::ObjectiveMode;
use serde::Serialize;

use crate::output::Staging;
use crate::runs::{resolve, train_seed};
use crate::ConfigArgs;

pub const AXES: [&str; 7] = [
    "ensemble",
    "buffer_mode",
    "aggregation",
    "pessimism",
    "reanalyze_budget",
    "pessimism_scope",
    "utd",
];
pub const ENSEMBLE_SIZES: [usize; 3] = [1, 2, 4];
pub const PESSIMISM_BETAS: [f64; 5] = [0.0, 1.0, 3.0, 10.0, 30.0];
pub const UTDS: [usize; 3] = [1, 2, 4];
/// Coefficient used by the pessimism-scope axis when the base config has none.
pub const SCOPE_BETA: f64 = 10.0;

fn set_beta(cfg: &mut RunConfig, beta: f64) {
    cfg.train.beta = beta;
    cfg.reanalyze.objective = ObjectiveMode::Pessimistic { beta };
}

/// Named variants of `base` along `axis`.
pub fn variants(base: &RunConfig, axis: &str) -> Result<Vec<(String, RunConfig)>> {
    let with = |name: String, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (name, c)
    };
    let out = match axis {
        "ensemble" => ENSEMBLE_SIZES
            .iter()
            .map(|&n| with(format!("heads_{n}"), &|c| c.model.dynamics_heads = n))
            .collect(),
        "buffer_mode" => vec![
            with("per_step".into(), &|c| c.train.insert_mode = InsertMode::PerStep),
            with("per_episode".into(), &|c| c.train.insert_mode = InsertMode::PerEpisode),
        ],
        "aggregation" => vec![
            with("aggregate".into(), &|c| {
                c.acting.objective = ObjectiveMode::AggregateHorizon
            }),
            with("final".into(), &|c| c.acting.objective = ObjectiveMode::EnsembleMean),
        ],
        "pessimism" => PESSIMISM_BETAS
            .iter()
            .map(|&b| with(format!("beta_{b}"), &|c| set_beta(c, b)))
            .collect(),
        "reanalyze_budget" => [(512, 64, 24), (64, 8, 3)]
            .iter()
            .map(|&(n, k, p)| {
                with(format!("{n}_{k}_{p}"), &|c| {
                    c.reanalyze.num_samples = n;
                    c.reanalyze.num_elites = k;
                    c.reanalyze.num_policy_trajectories = p;
                })
            })
            .collect(),
        "pessimism_scope" => {
            let beta = if base.train.beta > 0.0 {
                base.train.beta
            } else {
                SCOPE_BETA
            };
            vec![
                with("reanalyze".into(), &|c| set_beta(c, beta)),
                with("acting_and_reanalyze".into(), &|c| {
                    set_beta(c, beta);
                    c.acting.objective = ObjectiveMode::Pessimistic { beta };
                }),
            ]
        }
        "utd" => UTDS
            .iter()
            .map(|&u| {
                with(format!("utd_{u}"), &|c| {
                    c.train.utd = u;
                    c.train.reanalyze_interval = reanalyze_interval_for_utd(u);
                })
            })
            .collect(),
        other => bail!("unknown axis {other:?}; expected one of {}", AXES.join(", ")),
    };
    for (name, c) in &out {
        c.validate().map_err(|e| anyhow::anyhow!("variant {name}: {e}"))?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct AblationRow<'a> {
    variant: &'a str,
    seed: u64,
    env_step: usize,
    eval_return_mean: f64,
    eval_return_std: f64,
    updates: usize,
    reanalyzed: usize,
}

#[derive(Serialize)]
struct SummaryRow {
    variant: String,
    seeds: usize,
    final_mean: f64,
    final_se: Option<f64>,
    auc_mean: f64,
}

pub fn ablate(args: &ConfigArgs, axis: &str, out: &Path) -> Result<()> {
    let base = resolve(args, None)?;
    let grid = variants(&base, axis)?;
    let staging = Staging::new(out)?;
    staging.write_text("resolved_config.json", &base.to_json())?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut curves = Vec::new();
    for (name, cfg) in &grid {
        staging.write_text(&format!("{name}/resolved_config.json"), &cfg.to_json())?;
        let mut seeds = Vec::new();
        for &seed in &cfg.seeds {
            let r = train_seed(cfg, seed, &staging, &format!("{name}/seed_{seed}"))?;
            rows.extend(r.metrics.iter().map(|m| AblationRow {
                variant: name,
                seed,
                env_step: m.env_step,
                eval_return_mean: m.eval_return_mean,
                eval_return_std: m.eval_return_std,
                updates: m.updates,
                reanalyzed: m.reanalyzed,
            }));
            seeds.push(
                r.metrics
                    .iter()
                    .map(|m| (m.env_step as f64, m.eval_return_mean))
                    .collect(),
            );
        }
        let stats = task_mean_and_se(&TaskCurve {
            task_id: name.clone(),
            seeds,
        })?;
        let last = stats.steps.len() - 1;
        summaries.push(SummaryRow {
            variant: name.clone(),
            seeds: stats.count,
            final_mean: stats.mean[last],
            final_se: stats.se[last],
            auc_mean: if stats.steps.len() >= 2 {
                auc(&stats.steps, &stats.mean)?
            } else {
                0.0
            },
        });
        curves.push(stats);
    }
    staging.write_csv("ablation.csv", &rows)?;
    staging.write_csv("ablation_summary.csv", &summaries)?;
    let refs: Vec<_> = curves.iter().collect();
    staging.write_text(
        "ablation.svg",
        &svg::line_plot(&format!("ablation: {axis}"), "eval return", &refs),
    )?;
    let dir = staging.commit()?;
    println!("{}", dir.display());
    Ok(())
}
