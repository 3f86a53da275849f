//! Run configuration documents and named presets.

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::planner::PlannerConfig;
use crate::replay::InsertMode;
use crate::returns::ObjectiveMode;
use crate::trainer::TrainConfig;
use crate::worldmodel::{ModelConfig, TwoHotCodec, WorldModel};

pub const PRESETS: [&str; 4] = ["efficienttdmpc-utd4", "efficienttdmpc-utd1", "bmpc-like", "desk"];

/// Everything one training command needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: String,
    /// Overrides the environment's fixed episode length.
    pub episode_length: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub acting: PlannerConfig,
    pub reanalyze: PlannerConfig,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        preset("efficienttdmpc-utd4", "pendulum").expect("built-in preset")
    }
}

/// Pessimism coefficient used on an environment: zero on the low-dimensional tasks here.
pub fn beta_for_env(spec: &EnvSpec) -> f64 {
    if spec.action_dim() > 20 {
        10.0
    } else {
        0.0
    }
}

/// Per-step rewards lie in `[0, 1]` and discounts stay at or below 0.99 for the
/// default episode length, so returns fall inside this grid with margin.
pub fn value_codec() -> TwoHotCodec {
    TwoHotCodec::new(121, -10.0, 110.0)
}

/// Reanalyze interval that keeps the reanalyze ratio proportional to the update ratio.
pub fn reanalyze_interval_for_utd(utd: usize) -> usize {
    (8 / utd.max(1)).max(1)
}

/// Named configuration for environment `env`.
pub fn preset(name: &str, env: &str) -> Result<RunConfig> {
    let spec = EnvSpec::by_name(env)?;
    let beta = beta_for_env(&spec);
    let model = ModelConfig {
        obs_dim: spec.obs_dim(),
        action_dim: spec.action_dim(),
        codec: value_codec(),
        ..ModelConfig::default()
    };
    let base = RunConfig {
        env: env.to_string(),
        episode_length: None,
        model,
        train: TrainConfig {
            beta,
            ..TrainConfig::default()
        },
        acting: PlannerConfig::acting(),
        reanalyze: PlannerConfig::reanalyze(beta),
        seeds: vec![0],
    };
    let cfg = match name {
        "efficienttdmpc-utd4" => base,
        "efficienttdmpc-utd1" => RunConfig {
            train: TrainConfig {
                utd: 1,
                reanalyze_interval: reanalyze_interval_for_utd(1),
                ..base.train
            },
            ..base
        },
        "bmpc-like" => RunConfig {
            model: ModelConfig {
                dynamics_heads: 1,
                ..base.model
            },
            train: TrainConfig {
                utd: 1,
                reanalyze_interval: 10,
                beta: 0.0,
                insert_mode: InsertMode::PerEpisode,
                ..base.train
            },
            acting: PlannerConfig {
                horizon: 3,
                objective: ObjectiveMode::EnsembleMean,
                ..base.acting
            },
            reanalyze: PlannerConfig {
                num_samples: 512,
                num_elites: 64,
                num_policy_trajectories: 24,
                ..PlannerConfig::reanalyze(0.0)
            },
            ..base
        },
        "desk" => desk(base),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Small networks, budgets and evaluation cadence sized for a single CPU core.
fn desk(base: RunConfig) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            latent_dim: 16,
            hidden_dim: 32,
            encoder_dim: 32,
            codec: TwoHotCodec::new(51, -10.0, 110.0),
            ..base.model
        },
        train: TrainConfig {
            utd: 2,
            reanalyze_interval: reanalyze_interval_for_utd(2),
            reanalyze_batch: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            total_steps: 10_000,
            seed_steps: 1_000,
            eval_interval: 1_000,
            eval_episodes: 2,
            ..base.train
        },
        acting: PlannerConfig {
            iterations: 3,
            num_samples: 32,
            num_elites: 8,
            num_policy_trajectories: 4,
            ..base.acting
        },
        ..base
    }
}

impl RunConfig {
    pub fn env_spec(&self) -> Result<EnvSpec> {
        let mut spec = EnvSpec::by_name(&self.env)?;
        if let Some(l) = self.episode_length {
            if l == 0 {
                return Err(Error::Config("episode_length must be positive".into()));
            }
            spec.episode_length = l;
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.env_spec()?;
        self.model.validate()?;
        self.train.validate()?;
        self.acting.validate()?;
        self.reanalyze.validate()?;
        if self.model.obs_dim != spec.obs_dim() || self.model.action_dim != spec.action_dim() {
            return Err(Error::Config(format!(
                "model dims ({}, {}) do not match {} ({}, {})",
                self.model.obs_dim,
                self.model.action_dim,
                spec.name(),
                spec.obs_dim(),
                spec.action_dim()
            )));
        }
        for (name, p) in [("acting", &self.acting), ("reanalyze", &self.reanalyze)] {
            p.objective
                .validate(self.model.dynamics_heads, self.model.value_heads)
                .map_err(|e| Error::Config(format!("{name} objective: {e}")))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// A trainer for `seed`; the model is initialized from the same seed.
    pub fn trainer(&self, seed: u64) -> Result<crate::trainer::Trainer> {
        let spec = self.env_spec()?;
        let model = WorldModel::new(self.model.clone(), seed)?;
        let train = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let mut reanalyze = self.reanalyze.clone();
        if let ObjectiveMode::Pessimistic { .. } = reanalyze.objective {
            reanalyze.objective = ObjectiveMode::Pessimistic { beta: train.beta };
        }
        crate::trainer::Trainer::new(spec, model, train, self.acting.clone(), reanalyze)
    }
}
