//! MPPI correctness, pessimism steering and the exploitation study.

use std::time::Instant;

use etdmpc::analysis::crossscore::{replay_states, PlannerKind};
use etdmpc::analysis::{cross_score_study, CrossScoreConfig};
use etdmpc::envs::{pendulum_spec, BaseValue, Env, PerturbedModelEnsemble};
use etdmpc::planner::{plan, ExpertPolicy, PlannerConfig};
use etdmpc::replay::{InsertMode, ReplayBuffer, Transition};
use etdmpc::returns::ObjectiveMode;
use etdmpc::worldmodel::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{Quadratic, SplitRegions};
use crate::Outcome;

const C4_SEEDS: u64 = 20;
const C4_TARGET: f64 = 0.3;
const C4_TOL: f64 = 0.02;
const C4_MAX_SECS: f64 = 10.0;
const C5_SEEDS: u64 = 20;
const C5_MIN_FLIPS: usize = 19;
const C5_BETA: f64 = 10.0;
const C5_MAX_SECS: f64 = 30.0;
const C6_SEEDS: u64 = 3;
const C6_STATES: usize = 512;
const C6_MIN_RATIO: f64 = 2.0;
const C6_STATE_SCALE: f64 = 0.3;
const C6_MAX_SECS: f64 = 300.0;

fn one_step_planner(objective: ObjectiveMode) -> PlannerConfig {
    PlannerConfig {
        horizon: 1,
        iterations: 6,
        num_samples: 512,
        num_elites: 64,
        num_policy_trajectories: 0,
        temperature: 0.5,
        objective,
        warm_start: false,
        ..PlannerConfig::acting()
    }
}

pub fn c04_planner_quadratic() -> Outcome {
    let t0 = Instant::now();
    let model = Quadratic { target: C4_TARGET };
    let cfg = one_step_planner(ObjectiveMode::EnsembleMean);
    let mut worst: f64 = 0.0;
    for seed in 0..C4_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = plan(&[0.0], &model, &cfg, None, &mut rng).map_err(|e| e.to_string())?;
        let err = (p.mu[[0, 0]] - C4_TARGET).abs();
        if err >= C4_TOL {
            return Err(format!(
                "seed {seed}: mu = {:.4}, error {err:.4} >= {C4_TOL}",
                p.mu[[0, 0]]
            ));
        }
        worst = worst.max(err);
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= C4_MAX_SECS {
        return Err(format!("took {secs:.1}s, limit {C4_MAX_SECS}s"));
    }
    Ok(format!(
        "{C4_SEEDS}/{C4_SEEDS} seeds, worst |mu - {C4_TARGET}| = {worst:.4}"
    ))
}

pub fn c05_pessimism_steering() -> Outcome {
    let t0 = Instant::now();
    let model = SplitRegions {
        high_mean: 1.0,
        low_mean: 0.6,
        offsets: vec![-3.0, -1.0, 1.0, 3.0],
        spread: 1.0,
    };
    let mut flips = 0;
    for seed in 0..C5_SEEDS {
        let region = |beta: f64| -> Result<bool, String> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = one_step_planner(ObjectiveMode::Pessimistic { beta });
            let p = plan(&[0.0, 0.0], &model, &cfg, None, &mut rng).map_err(|e| e.to_string())?;
            Ok(p.mu[[0, 0]] > 0.0)
        };
        if region(0.0)? && !region(C5_BETA)? {
            flips += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if flips < C5_MIN_FLIPS {
        return Err(format!("beta {C5_BETA} flipped the region in {flips}/{C5_SEEDS} seeds"));
    }
    if secs >= C5_MAX_SECS {
        return Err(format!("took {secs:.1}s, limit {C5_MAX_SECS}s"));
    }
    Ok(format!(
        "flipped high-disagreement to unanimous region in {flips}/{C5_SEEDS} seeds"
    ))
}

/// Replay buffer of random-action pendulum episodes carrying simulator states.
fn random_replay(seed: u64, episodes: usize) -> ReplayBuffer {
    let spec = pendulum_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(spec.clone(), &mut rng);
    let mut buf = ReplayBuffer::new(episodes * spec.episode_length, InsertMode::PerStep);
    for ep in 0..episodes {
        env.reset(&mut rng);
        loop {
            let state = env.state().to_vec();
            let obs = env.observation();
            let action = Action::new(vec![rng.random_range(-1.0..1.0)]);
            let out = env.step(&action).expect("valid action");
            buf.insert(Transition {
                obs,
                action,
                reward: out.reward,
                done: out.done,
                policy_target: ExpertPolicy {
                    mean: vec![0.0],
                    std: vec![1.0],
                },
                episode_id: ep as u64,
                step_index: env.t() - 1,
                target_version: 0,
                sim_state: Some(state),
            });
            if out.done {
                break;
            }
        }
    }
    buf
}

pub fn c06_exploitation() -> Outcome {
    let t0 = Instant::now();
    let spec = pendulum_spec();
    let (mut single_self, mut single_oracle, mut ens_gap) = (0.0, 0.0, 0.0);
    for seed in 0..C6_SEEDS {
        let model = PerturbedModelEnsemble::with_corrupted_head(spec.clone(), C6_STATE_SCALE, 0, 4, 2, seed)
            .with_base_value(BaseValue::ScaledReward { scale: 10.0 })
            .with_policy(0.0);
        let buf = random_replay(100 + seed, 4);
        let states = replay_states(&buf, C6_STATES, seed, |t| t.sim_state.clone().expect("sim state"));
        let value = |s: &[f64]| model.base_value_at(s);
        let cfg = CrossScoreConfig {
            seed,
            ..CrossScoreConfig::default()
        };
        let study = cross_score_study(&spec, &model, &states, &value, &cfg).map_err(|e| e.to_string())?;
        if study.records.len() != 2 * C6_STATES {
            return Err(format!("seed {seed}: {} records", study.records.len()));
        }
        single_self += study.mean_delta(PlannerKind::SingleHead, "single_head").expect("row");
        single_oracle += study.mean_delta(PlannerKind::SingleHead, "oracle").expect("row");
        ens_gap += study.self_oracle_gap(PlannerKind::Ensemble).expect("row");
    }
    let n = C6_SEEDS as f64;
    let (single_self, single_oracle, ens_gap) = (single_self / n, single_oracle / n, ens_gap / n);
    let single_gap = single_self - single_oracle;
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!(
        "single-head self dR {single_self:.1} vs oracle {single_oracle:.1}; gaps single {single_gap:.1}, ensemble {ens_gap:.1}"
    );
    if !(single_self > 0.0 && single_self >= C6_MIN_RATIO * single_oracle) {
        return Err(format!("self/oracle ratio below {C6_MIN_RATIO}: {detail}"));
    }
    if !(ens_gap < single_gap) {
        return Err(format!("ensemble gap not smaller: {detail}"));
    }
    if secs >= C6_MAX_SECS {
        return Err(format!("took {secs:.1}s, limit {C6_MAX_SECS}s"));
    }
    Ok(detail)
}
