//! Planner cross-scoring: how much of a planner's predicted advantage survives an exact simulator.
//!
//! Each replay state is planned twice, once against a single (dynamics, value)
//! head pair and once against the ensemble mean. The two plans and the policy
//! prior's mean sequence are each scored by the single head, the ensemble and
//! the exact simulator. The advantage over the policy, extrapolated linearly
//! to a full episode, is reported per estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{oracle_return, EnvSpec};
use crate::error::{Error, Result};
use crate::planner::{plan, policy_mean_sequence, PlannerConfig};
use crate::replay::{ReplayBuffer, Transition};
use crate::returns::{ensemble_mean, rollout_returns, ObjectiveMode};
use crate::worldmodel::{Action, LatentModel};

/// One replay state: the simulator state for the oracle and the latent for the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub id: usize,
    pub sim_state: Option<Vec<f64>>,
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossScoreConfig {
    pub num_states: usize,
    pub planner: PlannerConfig,
    /// Head pair the single-head planner and estimator use.
    pub dynamics_head: usize,
    pub value_head: usize,
    pub seed: u64,
}

impl Default for CrossScoreConfig {
    fn default() -> Self {
        Self {
            num_states: 512,
            planner: PlannerConfig {
                horizon: 3,
                iterations: 6,
                num_samples: 64,
                num_elites: 8,
                num_policy_trajectories: 3,
                temperature: 0.5,
                warm_start: false,
                ..PlannerConfig::acting()
            },
            dynamics_head: 0,
            value_head: 0,
            seed: 0,
        }
    }
}

/// Which objective produced the plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    SingleHead,
    Ensemble,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SingleHead => "single_head",
            Self::Ensemble => "ensemble",
        }
    }
}

/// One estimator's view of a sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub single_head: f64,
    pub ensemble: f64,
    pub oracle: f64,
}

impl Estimates {
    fn map2(self, o: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            single_head: f(self.single_head, o.single_head),
            ensemble: f(self.ensemble, o.ensemble),
            oracle: f(self.oracle, o.oracle),
        }
    }

    pub fn get(&self, estimator: &str) -> Option<f64> {
        match estimator {
            "single_head" => Some(self.single_head),
            "ensemble" => Some(self.ensemble),
            "oracle" => Some(self.oracle),
            _ => None,
        }
    }
}

/// Flat record, one per (state, planner).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossScoreRecord {
    pub state_id: usize,
    pub planner: PlannerKind,
    pub planned_single_head: f64,
    pub planned_ensemble: f64,
    pub planned_oracle: f64,
    pub policy_single_head: f64,
    pub policy_ensemble: f64,
    pub policy_oracle: f64,
    pub delta_single_head: f64,
    pub delta_ensemble: f64,
    pub delta_oracle: f64,
}

impl CrossScoreRecord {
    fn new(state_id: usize, planner: PlannerKind, planned: Estimates, policy: Estimates, factor: f64) -> Self {
        let d = planned.map2(policy, |a, b| (a - b) * factor);
        Self {
            state_id,
            planner,
            planned_single_head: planned.single_head,
            planned_ensemble: planned.ensemble,
            planned_oracle: planned.oracle,
            policy_single_head: policy.single_head,
            policy_ensemble: policy.ensemble,
            policy_oracle: policy.oracle,
            delta_single_head: d.single_head,
            delta_ensemble: d.ensemble,
            delta_oracle: d.oracle,
        }
    }

    pub fn delta(&self) -> Estimates {
        Estimates {
            single_head: self.delta_single_head,
            ensemble: self.delta_ensemble,
            oracle: self.delta_oracle,
        }
    }
}

/// Mean and standard error of ΔR over states for one (planner, estimator) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub planner: PlannerKind,
    pub estimator: String,
    pub mean_delta: f64,
    pub se_delta: f64,
    pub states: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossScoreStudy {
    pub records: Vec<CrossScoreRecord>,
    pub summary: Vec<SummaryRow>,
    /// States without a simulator state.
    pub skipped: usize,
}

impl CrossScoreStudy {
    pub fn mean_delta(&self, planner: PlannerKind, estimator: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.planner == planner && r.estimator == estimator)
            .map(|r| r.mean_delta)
    }

    /// Mean ΔR under the planner's own objective minus mean ΔR under the oracle.
    pub fn self_oracle_gap(&self, planner: PlannerKind) -> Option<f64> {
        let own = match planner {
            PlannerKind::SingleHead => "single_head",
            PlannerKind::Ensemble => "ensemble",
        };
        Some(self.mean_delta(planner, own)? - self.mean_delta(planner, "oracle")?)
    }
}

/// Up to `n` distinct buffer entries chosen by `seed`, encoded with `encode`.
pub fn replay_states(
    buffer: &ReplayBuffer,
    n: usize,
    seed: u64,
    encode: impl Fn(&Transition) -> Vec<f64>,
) -> Vec<StudyState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, buffer.len(), n.min(buffer.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| {
            let t = buffer.get(i).expect("sampled index in range");
            StudyState {
                id: i,
                sim_state: t.sim_state.clone(),
                latent: encode(t),
            }
        })
        .collect()
}

/// Runs the study over `states`. `oracle_value` bootstraps the exact rollout at its final state.
pub fn cross_score_study<M>(
    spec: &EnvSpec,
    model: &M,
    states: &[StudyState],
    oracle_value: &(dyn Fn(&[f64]) -> f64 + Sync),
    config: &CrossScoreConfig,
) -> Result<CrossScoreStudy>
where
    M: LatentModel + ?Sized,
{
    let single = ObjectiveMode::SingleHead {
        dynamics: config.dynamics_head,
        value: config.value_head,
    };
    single.validate(model.num_dynamics(), model.num_values())?;
    config.planner.validate()?;
    let h = config.planner.horizon;
    let gamma = config.planner.gamma;
    let factor = spec.episode_length as f64 / h as f64;

    let score = |sim: &[f64], z: &[f64], actions: &[Action]| -> Result<Estimates> {
        let table = rollout_returns(model, z, actions, gamma)?;
        Ok(Estimates {
            single_head: table.get(config.dynamics_head, config.value_head, h),
            ensemble: ensemble_mean(&table, h),
            oracle: oracle_return(spec, sim, actions, oracle_value, gamma),
        })
    };

    let per_state = |s: &StudyState| -> Result<Option<[CrossScoreRecord; 2]>> {
        let Some(sim) = s.sim_state.as_deref() else {
            return Ok(None);
        };
        let policy_seq = policy_mean_sequence(&s.latent, model, config.planner.policy_head, h)
            .ok_or_else(|| Error::Config("cross-scoring needs a model with a policy prior".into()))?;
        let policy = score(sim, &s.latent, &policy_seq)?;
        let mut out = Vec::with_capacity(2);
        for (k, (kind, objective)) in [
            (PlannerKind::SingleHead, single),
            (PlannerKind::Ensemble, ObjectiveMode::EnsembleMean),
        ]
        .into_iter()
        .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(2 * s.id as u64 + k as u64);
            let cfg = PlannerConfig {
                objective,
                ..config.planner.clone()
            };
            let p = plan(&s.latent, model, &cfg, None, &mut rng)?;
            let planned = score(sim, &s.latent, &p.mean_actions())?;
            out.push(CrossScoreRecord::new(s.id, kind, planned, policy, factor));
        }
        let [a, b]: [CrossScoreRecord; 2] = out.try_into().expect("two planners");
        Ok(Some([a, b]))
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<Option<[CrossScoreRecord; 2]>>> = {
        use rayon::prelude::*;
        states.par_iter().map(per_state).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Option<[CrossScoreRecord; 2]>>> = states.iter().map(per_state).collect();

    let mut records = Vec::with_capacity(2 * states.len());
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(pair) => records.extend(pair),
            None => skipped += 1,
        }
    }
    let summary = summarize(&records);
    Ok(CrossScoreStudy {
        records,
        summary,
        skipped,
    })
}

fn summarize(records: &[CrossScoreRecord]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for planner in [PlannerKind::SingleHead, PlannerKind::Ensemble] {
        for estimator in ["single_head", "ensemble", "oracle"] {
            let xs: Vec<f64> = records
                .iter()
                .filter(|r| r.planner == planner)
                .filter_map(|r| r.delta().get(estimator))
                .collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, se) = super::mean_and_se(&xs);
            out.push(SummaryRow {
                planner,
                estimator: estimator.to_string(),
                mean_delta: mean,
                se_delta: se.unwrap_or(0.0),
                states: xs.len(),
            });
        }
    }
    out
}
