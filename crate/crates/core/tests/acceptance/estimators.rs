//! Return-estimator identities, oracle equivalence and variance reduction.

use std::time::Instant;

use etdmpc::envs::{oracle_return, pendulum_spec, BaseValue, PerturbationScales, PerturbedModelEnsemble};
use etdmpc::returns::{
    aggregate_horizon, ensemble_mean, rollout_returns, variance_of_mean, ObjectiveMode, ReturnTable,
};
use etdmpc::worldmodel::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::Outcome;

const C1_TABLES: usize = 1_000;
const C1_MAX_SECS: f64 = 1.0;
const C2_CASES: usize = 100;
const C2_TOL: f64 = 1e-9;
const C2_MAX_SECS: f64 = 10.0;
const C3_DRAWS: usize = 10_000;
const C3_ALPHA: f64 = 0.01;
const C3_MAX_SECS: f64 = 120.0;
/// Correlations at or above this count as perfect.
const C3_PERFECT_CORR: f64 = 1.0 - 1e-12;

fn random_table(rng: &mut ChaCha8Rng, horizon: Option<usize>) -> ReturnTable {
    let nf = rng.random_range(1..6);
    let nv = rng.random_range(1..4);
    let h = horizon.unwrap_or_else(|| rng.random_range(1..8));
    let center: f64 = rng.random_range(-100.0..100.0);
    let spread: f64 = rng.random_range(0.0..20.0);
    let gamma = rng.random_range(0.9..1.0);
    ReturnTable::from_fn(nf, nv, h, gamma, |_, _, _| {
        center + spread * rng.random_range(-1.0..1.0)
    })
}

fn naive_mean(t: &ReturnTable, h: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..t.dynamics_heads() {
        for j in 0..t.value_heads() {
            sum += t.get(i, j, h);
        }
    }
    sum / (t.dynamics_heads() * t.value_heads()) as f64
}

fn naive_variance_of_mean(t: &ReturnTable, h: usize) -> f64 {
    let n = t.dynamics_heads() * t.value_heads();
    if n < 2 {
        return 0.0;
    }
    let m = naive_mean(t, h);
    let mut ss = 0.0;
    for i in 0..t.dynamics_heads() {
        for j in 0..t.value_heads() {
            ss += (t.get(i, j, h) - m) * (t.get(i, j, h) - m);
        }
    }
    ss / (n * (n - 1)) as f64
}

pub fn c01_estimator_identities() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..C1_TABLES {
        let t = random_table(&mut rng, None);
        let h = t.horizon();
        let mean = ObjectiveMode::EnsembleMean.evaluate(&t);
        let pess = ObjectiveMode::Pessimistic { beta: 0.0 }.evaluate(&t);
        if mean.to_bits() != pess.to_bits() {
            return Err(format!("table {k}: Pessimistic(0) {pess} != EnsembleMean {mean}"));
        }
        for d in 1..=h {
            if ensemble_mean(&t, d) != naive_mean(&t, d) {
                return Err(format!("table {k} depth {d}: ensemble mean differs from reference"));
            }
            if variance_of_mean(&t, d) != naive_variance_of_mean(&t, d) {
                return Err(format!("table {k} depth {d}: variance of mean differs from reference"));
            }
        }
        let t1 = random_table(&mut rng, Some(1));
        if aggregate_horizon(&t1) != ensemble_mean(&t1, 1) {
            return Err(format!("table {k}: AggregateHorizon(H=1) != EnsembleMean(h=1)"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= C1_MAX_SECS {
        return Err(format!("took {secs:.2}s, limit {C1_MAX_SECS}s"));
    }
    Ok(format!("{C1_TABLES} random tables exact"))
}

pub fn c02_oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let spec = pendulum_spec();
    let (nf, nv, h, gamma) = (4, 2, 6, 0.99);
    let model = PerturbedModelEnsemble::new(spec.clone(), PerturbationScales::uniform(0.0), nf, nv, 0)
        .with_base_value(BaseValue::ScaledReward { scale: 10.0 });
    let value = |s: &[f64]| model.base_value_at(s);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..C2_CASES {
        let s = vec![
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-8.0..8.0),
        ];
        let acts: Vec<Action> = (0..h).map(|_| Action::new(vec![rng.random_range(-1.0..1.0)])).collect();
        let table = rollout_returns(&model, &s, &acts, gamma).map_err(|e| e.to_string())?;
        for d in 1..=h {
            let oracle = oracle_return(&spec, &s, &acts[..d], &value, gamma);
            for i in 0..nf {
                for j in 0..nv {
                    worst = worst.max((table.get(i, j, d) - oracle).abs());
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if worst >= C2_TOL {
        return Err(format!("max |rollout - oracle| = {worst:e}, tolerance {C2_TOL:e}"));
    }
    if secs >= C2_MAX_SECS {
        return Err(format!("took {secs:.2}s, limit {C2_MAX_SECS}s"));
    }
    Ok(format!("max |rollout - oracle| = {worst:.1e} over {C2_CASES} cases"))
}

/// One-sided Pitman–Morgan test of `var(x) < var(y)` for paired samples; returns the p-value.
pub fn pitman_morgan_less(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let u: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let v: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let r = correlation(&u, &v);
    let t = r * ((n - 2.0) / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).expect("valid t distribution");
    (r, dist.cdf(t))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn c03_variance_reduction() -> Outcome {
    let t0 = Instant::now();
    let spec = pendulum_spec();
    let (nf, nv, h, gamma) = (4, 2, 6, 0.99);
    let scales = PerturbationScales {
        state: 0.05,
        reward: 0.05,
        value: 1.0,
    };
    let s0 = [2.0, 0.5];
    let acts: Vec<Action> = (0..h).map(|u| Action::new(vec![(0.7 * u as f64).sin()])).collect();
    let mut singles = vec![Vec::with_capacity(C3_DRAWS); nf * nv];
    let mut depth_means = vec![Vec::with_capacity(C3_DRAWS); h];
    let mut aggregate = Vec::with_capacity(C3_DRAWS);
    for draw in 0..C3_DRAWS {
        let model = PerturbedModelEnsemble::new(spec.clone(), scales, nf, nv, 10_000 + draw as u64)
            .with_base_value(BaseValue::ScaledReward { scale: 10.0 });
        let t = rollout_returns(&model, &s0, &acts, gamma).map_err(|e| e.to_string())?;
        for i in 0..nf {
            for j in 0..nv {
                singles[i * nv + j].push(t.get(i, j, h));
            }
        }
        for d in 1..=h {
            depth_means[d - 1].push(ensemble_mean(&t, d));
        }
        aggregate.push(aggregate_horizon(&t));
    }
    let terminal = &depth_means[h - 1];
    let mut worst_p: f64 = 0.0;
    for (k, single) in singles.iter().enumerate() {
        let (_, p) = pitman_morgan_less(terminal, single);
        if p >= C3_ALPHA {
            return Err(format!(
                "ensemble vs single head {k}: var {:.4} vs {:.4}, p = {p:.3}",
                variance(terminal),
                variance(single)
            ));
        }
        worst_p = worst_p.max(p);
    }
    let min_single = singles.iter().map(|s| variance(s)).fold(f64::INFINITY, f64::min);
    let max_corr = (0..h - 1)
        .map(|d| correlation(&depth_means[d], terminal))
        .fold(f64::NEG_INFINITY, f64::max);
    let agg_detail = if max_corr < C3_PERFECT_CORR {
        let (_, p) = pitman_morgan_less(&aggregate, terminal);
        if p >= C3_ALPHA {
            return Err(format!(
                "aggregate vs terminal: var {:.4} vs {:.4}, p = {p:.3}",
                variance(&aggregate),
                variance(terminal)
            ));
        }
        format!(
            "aggregate var {:.4} < terminal {:.4} (p = {p:.1e}, max depth corr {max_corr:.3})",
            variance(&aggregate),
            variance(terminal)
        )
    } else {
        "per-depth estimates perfectly correlated; aggregate clause vacuous".to_string()
    };
    let secs = t0.elapsed().as_secs_f64();
    if secs >= C3_MAX_SECS {
        return Err(format!("took {secs:.1}s, limit {C3_MAX_SECS}s"));
    }
    Ok(format!(
        "ensemble var {:.4} < min single {min_single:.4} (worst p = {worst_p:.1e}); {agg_detail}",
        variance(terminal)
    ))
}
