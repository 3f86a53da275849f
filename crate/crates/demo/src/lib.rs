//! Browser bindings for three small planner experiments.
//!
//! Each experiment is a plain function returning a serializable result; the
//! `wasm_bindgen` exports wrap them and hand JSON to the page.

use etdmpc::envs::{pendulum_spec, BaseValue, PerturbationScales, PerturbedModelEnsemble};
use etdmpc::planner::{plan, plan_traced, PlannerConfig};
use etdmpc::returns::{aggregate_horizon, ensemble_mean, rollout_returns, variance_of_mean, ObjectiveMode};
use etdmpc::worldmodel::{Action, LatentModel};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// One-step reward `-(a - target)^2`.
struct Quadratic {
    target: f64,
}

impl LatentModel for Quadratic {
    fn latent_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn num_dynamics(&self) -> usize {
        1
    }
    fn num_values(&self) -> usize {
        1
    }
    fn next_latents(&self, _head: usize, z: &Array2<f64>, _a: &Array2<f64>) -> Array2<f64> {
        z.clone()
    }
    fn rewards(&self, _z: &Array2<f64>, a: &Array2<f64>) -> Vec<f64> {
        a.column(0).iter().map(|a| -(a - self.target).powi(2)).collect()
    }
    fn values(&self, _head: usize, z: &Array2<f64>, _target: bool) -> Vec<f64> {
        vec![0.0; z.nrows()]
    }
    fn policy(&self, _z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        None
    }
}

/// Positive actions lead to a high-mean region the heads disagree on,
/// negative actions to a lower-mean region all heads agree on.
struct SplitRegions {
    spread: f64,
}

const HIGH_MEAN: f64 = 1.0;
const LOW_MEAN: f64 = 0.6;
const HEAD_OFFSETS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];

impl SplitRegions {
    fn value(&self, a: f64, head: usize) -> f64 {
        if a > 0.0 {
            HIGH_MEAN - (a - 0.5).powi(2) + self.spread * HEAD_OFFSETS[head]
        } else {
            LOW_MEAN - (a + 0.5).powi(2)
        }
    }
}

impl LatentModel for SplitRegions {
    fn latent_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn num_dynamics(&self) -> usize {
        HEAD_OFFSETS.len()
    }
    fn num_values(&self) -> usize {
        1
    }
    fn next_latents(&self, head: usize, _z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((a.nrows(), 2), |(r, c)| if c == 0 { a[[r, 0]] } else { head as f64 })
    }
    fn rewards(&self, z: &Array2<f64>, _a: &Array2<f64>) -> Vec<f64> {
        vec![0.0; z.nrows()]
    }
    fn values(&self, _head: usize, z: &Array2<f64>, _target: bool) -> Vec<f64> {
        z.rows().into_iter().map(|r| self.value(r[0], r[1] as usize)).collect()
    }
    fn policy(&self, _z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        None
    }
}

fn one_step_planner(iterations: usize, samples: usize, objective: ObjectiveMode) -> PlannerConfig {
    PlannerConfig {
        horizon: 1,
        iterations,
        num_samples: samples.max(2),
        num_elites: (samples / 8).max(1),
        num_policy_trajectories: 0,
        objective,
        warm_start: false,
        ..PlannerConfig::acting()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationStep {
    pub mu: f64,
    pub sigma: f64,
    pub best_score: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MppiTrace {
    pub target: f64,
    pub steps: Vec<IterationStep>,
    pub final_mu: f64,
}

/// MPPI on the one-dimensional quadratic: the sampling Gaussian after every iteration.
pub fn mppi_trace(target: f64, iterations: usize, samples: usize, seed: u64) -> Result<MppiTrace, String> {
    let cfg = one_step_planner(iterations.max(1), samples, ObjectiveMode::EnsembleMean);
    let model = Quadratic { target };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, trace) = plan_traced(&[0.0], &model, &cfg, None, &mut rng).map_err(|e| e.to_string())?;
    Ok(MppiTrace {
        target,
        steps: trace
            .iterations
            .iter()
            .map(|it| IterationStep {
                mu: it.mu[[0, 0]],
                sigma: it.sigma[[0, 0]],
                best_score: it.elite_scores.first().copied().unwrap_or(f64::NAN),
            })
            .collect(),
        final_mu: p.mu[[0, 0]],
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Landscape {
    pub beta: f64,
    pub actions: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub objective: Vec<f64>,
    pub chosen: f64,
}

/// Ensemble mean, its standard error and the pessimistic objective over the action line.
pub fn pessimism_landscape(beta: f64, spread: f64, points: usize, seed: u64) -> Result<Landscape, String> {
    if !(beta >= 0.0) {
        return Err("beta must be non-negative".into());
    }
    let model = SplitRegions { spread };
    let n = points.max(2);
    let actions: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
    let (mut mean, mut std_error, mut objective) = (Vec::new(), Vec::new(), Vec::new());
    for &a in &actions {
        let t = rollout_returns(&model, &[0.0, 0.0], &[Action::new(vec![a])], 0.99).map_err(|e| e.to_string())?;
        let (m, se) = (ensemble_mean(&t, 1), variance_of_mean(&t, 1).sqrt());
        mean.push(m);
        std_error.push(se);
        objective.push(m - beta * se);
    }
    let cfg = one_step_planner(6, 512, ObjectiveMode::Pessimistic { beta });
    let p = plan(&[0.0, 0.0], &model, &cfg, None, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    Ok(Landscape {
        beta,
        actions,
        mean,
        std_error,
        objective,
        chosen: p.mu[[0, 0]],
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceStudy {
    pub draws: usize,
    /// Variance of each single (dynamics, value) head estimate across draws.
    pub single_head: Vec<f64>,
    pub ensemble_mean: f64,
    pub aggregate: f64,
    /// Per-draw estimates of head pair (0, 0), the ensemble mean and the aggregate.
    pub samples_single: Vec<f64>,
    pub samples_ensemble: Vec<f64>,
    pub samples_aggregate: Vec<f64>,
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Spread of pendulum return estimates over freshly perturbed four-by-two ensembles.
pub fn variance_study(state_scale: f64, value_scale: f64, draws: usize, seed: u64) -> Result<VarianceStudy, String> {
    if draws < 2 {
        return Err("need at least two draws".into());
    }
    let (nf, nv, h) = (4, 2, 6);
    let spec = pendulum_spec();
    let scales = PerturbationScales {
        state: state_scale,
        reward: state_scale,
        value: value_scale,
    };
    let acts: Vec<Action> = (0..h).map(|u| Action::new(vec![(0.7 * u as f64).sin()])).collect();
    let mut singles = vec![Vec::with_capacity(draws); nf * nv];
    let (mut ens, mut agg) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
    for d in 0..draws {
        let model = PerturbedModelEnsemble::new(spec.clone(), scales, nf, nv, seed.wrapping_add(d as u64))
            .with_base_value(BaseValue::ScaledReward { scale: 10.0 });
        let t = rollout_returns(&model, &[2.0, 0.5], &acts, 0.99).map_err(|e| e.to_string())?;
        for i in 0..nf {
            for j in 0..nv {
                singles[i * nv + j].push(t.get(i, j, h));
            }
        }
        ens.push(ensemble_mean(&t, h));
        agg.push(aggregate_horizon(&t));
    }
    Ok(VarianceStudy {
        draws,
        single_head: singles.iter().map(|s| variance(s)).collect(),
        ensemble_mean: variance(&ens),
        aggregate: variance(&agg),
        samples_single: singles.swap_remove(0),
        samples_ensemble: ens,
        samples_aggregate: agg,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = mppiTrace)]
pub fn mppi_trace_js(target: f64, iterations: u32, samples: u32, seed: u32) -> Result<String, JsValue> {
    to_js(mppi_trace(target, iterations as usize, samples as usize, seed as u64))
}

#[wasm_bindgen(js_name = pessimismLandscape)]
pub fn pessimism_landscape_js(beta: f64, spread: f64, seed: u32) -> Result<String, JsValue> {
    to_js(pessimism_landscape(beta, spread, 201, seed as u64))
}

#[wasm_bindgen(js_name = varianceStudy)]
pub fn variance_study_js(state_scale: f64, value_scale: f64, draws: u32, seed: u32) -> Result<String, JsValue> {
    to_js(variance_study(state_scale, value_scale, draws as usize, seed as u64))
}
