//! End-to-end learning on pendulum: the smoke test and the directional UTD, freshness and reanalyze-budget studies.
//!
//! The three criteria share one set of training runs, cached per variant and seed.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use etdmpc::analysis::auc;
use etdmpc::config::{preset, reanalyze_interval_for_utd, RunConfig};
use etdmpc::envs::{pendulum_spec, BaseValue, PerturbationScales, PerturbedModelEnsemble};
use etdmpc::planner::PlannerConfig;
use etdmpc::replay::InsertMode;
use etdmpc::trainer::evaluate_planner;

use crate::Outcome;

const SEEDS: [u64; 3] = [0, 1, 2];
const MIN_SEEDS: usize = 2;
const RUN_STEPS: usize = 5_000;
const EVAL_INTERVAL: usize = 500;
const FINAL_EVAL_EPISODES: usize = 5;
const FINAL_EVAL_SEED: u64 = 999;
const C11_FRACTION: f64 = 0.85;
const C11_MAX_STEPS: usize = 30_000;
const C11_MAX_SECS: f64 = 1_800.0;
const ORACLE_EPISODES: usize = 3;
const ORACLE_SEED: u64 = 7;
/// `(horizon, value scale)` pairs tried for the exact-simulator reference.
const ORACLE_GRID: [(usize, f64); 4] = [(6, 0.0), (6, 10.0), (6, 30.0), (12, 0.0)];
const C13_MAX_REL_CHANGE: f64 = 0.10;
const C13_MIN_SPEEDUP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Variant {
    /// Per-step insertion, UTD 2, cheap reanalyze.
    Base,
    PerEpisode,
    Utd1,
    FullReanalyze,
}

#[derive(Clone, Debug)]
struct RunSummary {
    steps: Vec<f64>,
    returns: Vec<f64>,
    final_return: f64,
    reanalyze_ms: f64,
    wall_secs: f64,
}

impl RunSummary {
    fn auc(&self) -> f64 {
        auc(&self.steps, &self.returns).expect("learning curve has at least two points")
    }
}

static RUNS: Mutex<Option<HashMap<(Variant, u64), RunSummary>>> = Mutex::new(None);

fn run_config(variant: Variant) -> RunConfig {
    let mut cfg = preset("desk", "pendulum").expect("desk preset");
    cfg.train.total_steps = RUN_STEPS;
    cfg.train.eval_interval = EVAL_INTERVAL;
    match variant {
        Variant::Base => {}
        Variant::PerEpisode => cfg.train.insert_mode = InsertMode::PerEpisode,
        Variant::Utd1 => {
            cfg.train.utd = 1;
            cfg.train.reanalyze_interval = reanalyze_interval_for_utd(1);
        }
        Variant::FullReanalyze => cfg.reanalyze = PlannerConfig::reanalyze_full_budget(cfg.train.beta),
    }
    cfg
}

fn training_run(variant: Variant, seed: u64) -> Result<RunSummary, String> {
    let mut guard = RUNS.lock().unwrap_or_else(|e| e.into_inner());
    let cache = guard.get_or_insert_with(HashMap::new);
    if let Some(r) = cache.get(&(variant, seed)) {
        return Ok(r.clone());
    }
    let t0 = Instant::now();
    let mut trainer = run_config(variant).trainer(seed).map_err(|e| e.to_string())?;
    let out = trainer.run(|_, _| {}).map_err(|e| e.to_string())?;
    let finals = trainer
        .evaluate(FINAL_EVAL_EPISODES, FINAL_EVAL_SEED)
        .map_err(|e| e.to_string())?;
    let summary = RunSummary {
        steps: out.metrics.iter().map(|m| m.env_step as f64).collect(),
        returns: out.metrics.iter().map(|m| m.eval_return_mean).collect(),
        final_return: finals.iter().sum::<f64>() / finals.len() as f64,
        reanalyze_ms: out.reanalyze_ms_total,
        wall_secs: t0.elapsed().as_secs_f64(),
    };
    cache.insert((variant, seed), summary.clone());
    Ok(summary)
}

fn runs(variant: Variant) -> Result<Vec<RunSummary>, String> {
    SEEDS.iter().map(|&s| training_run(variant, s)).collect()
}

/// Best mean episode return of MPPI planning through the exact simulator.
fn oracle_reference() -> Result<(f64, String), String> {
    let spec = pendulum_spec();
    let mut best = (f64::NEG_INFINITY, String::new());
    for (horizon, scale) in ORACLE_GRID {
        let model = PerturbedModelEnsemble::new(spec.clone(), PerturbationScales::uniform(0.0), 1, 1, 0)
            .with_base_value(BaseValue::ScaledReward { scale });
        let planner = PlannerConfig {
            horizon,
            num_samples: 256,
            num_elites: 32,
            num_policy_trajectories: 0,
            ..PlannerConfig::acting()
        };
        let returns = evaluate_planner(
            &spec,
            &model,
            |s, _| Ok(s.to_vec()),
            &planner,
            ORACLE_EPISODES,
            ORACLE_SEED,
        )
        .map_err(|e| e.to_string())?;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        if mean > best.0 {
            best = (mean, format!("H{horizon}, value scale {scale}"));
        }
    }
    Ok(best)
}

pub fn c11_learning() -> Outcome {
    let t0 = Instant::now();
    let (best, best_cfg) = oracle_reference()?;
    let threshold = C11_FRACTION * best;
    let oracle_secs = t0.elapsed().as_secs_f64();
    let mut notes = Vec::new();
    let mut passed = 0;
    let mut secs = oracle_secs;
    for (seed, run) in SEEDS.iter().zip(runs(Variant::Base)?) {
        secs += run.wall_secs;
        let hit = run
            .steps
            .iter()
            .zip(&run.returns)
            .find(|(&s, &r)| s as usize <= C11_MAX_STEPS && r >= threshold);
        match hit {
            Some((s, r)) => {
                passed += 1;
                notes.push(format!("seed {seed}: {r:.0} at {s}"));
            }
            None => {
                let top = run.returns.iter().cloned().fold(f64::MIN, f64::max);
                notes.push(format!("seed {seed}: missed, best {top:.0}"));
            }
        }
    }
    let detail = format!(
        "threshold {threshold:.1} = {C11_FRACTION} x oracle {best:.1} ({best_cfg}); {}; {secs:.0}s",
        notes.join(", ")
    );
    if passed < MIN_SEEDS {
        return Err(format!("{passed}/{} seeds: {detail}", SEEDS.len()));
    }
    if secs >= C11_MAX_SECS {
        return Err(format!("took {secs:.0}s, limit {C11_MAX_SECS}s: {detail}"));
    }
    Ok(format!("{passed}/{} seeds: {detail}", SEEDS.len()))
}

fn auc_wins(better: &[RunSummary], worse: &[RunSummary]) -> (usize, String) {
    let pairs: Vec<String> = better
        .iter()
        .zip(worse)
        .map(|(b, w)| format!("{:.0}/{:.0}", b.auc() / 1e3, w.auc() / 1e3))
        .collect();
    let wins = better.iter().zip(worse).filter(|(b, w)| b.auc() >= w.auc()).count();
    (wins, pairs.join(" "))
}

pub fn c12_utd_freshness() -> Outcome {
    let base = runs(Variant::Base)?;
    let (fresh_wins, fresh) = auc_wins(&base, &runs(Variant::PerEpisode)?);
    let (utd_wins, utd) = auc_wins(&base, &runs(Variant::Utd1)?);
    let detail = format!(
        "AUC/1e3 per-step vs per-episode {fresh} ({fresh_wins}/{n}); UTD 2 vs UTD 1 {utd} ({utd_wins}/{n})",
        n = SEEDS.len()
    );
    if fresh_wins < MIN_SEEDS || utd_wins < MIN_SEEDS {
        return Err(detail);
    }
    Ok(detail)
}

pub fn c13_cheap_reanalyze() -> Outcome {
    let cheap = runs(Variant::Base)?;
    let full = runs(Variant::FullReanalyze)?;
    let mean = |rs: &[RunSummary], f: fn(&RunSummary) -> f64| rs.iter().map(f).sum::<f64>() / rs.len() as f64;
    let (r_cheap, r_full) = (mean(&cheap, |r| r.final_return), mean(&full, |r| r.final_return));
    let (t_cheap, t_full) = (mean(&cheap, |r| r.reanalyze_ms), mean(&full, |r| r.reanalyze_ms));
    let change = (r_cheap - r_full).abs() / r_full.abs();
    let speedup = t_full / t_cheap;
    let detail = format!(
        "final return {r_cheap:.1} vs {r_full:.1} ({:.1}% change); reanalyze time {:.1}s vs {:.1}s ({speedup:.1}x)",
        100.0 * change,
        t_cheap / 1e3,
        t_full / 1e3
    );
    if change >= C13_MAX_REL_CHANGE || speedup < C13_MIN_SPEEDUP {
        return Err(detail);
    }
    Ok(detail)
}
