//! Deterministic analytic environments, the exact-simulator return oracle and
//! perturbed model ensembles built from the simulators.

pub mod pendulum;
pub mod perturbed;
pub mod pointmass;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::worldmodel::Action;

pub use pendulum::PendulumParams;
pub use perturbed::{BaseValue, PerturbationScales, PerturbedModelEnsemble};
pub use pointmass::PointmassParams;

pub const DEFAULT_EPISODE_LENGTH: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum(PendulumParams),
    Pointmass(PointmassParams),
}

/// An environment description: exact dynamics, reward, reset distribution and episode length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub episode_length: usize,
}

pub fn pendulum_spec() -> EnvSpec {
    EnvSpec {
        kind: EnvKind::Pendulum(PendulumParams::default()),
        episode_length: DEFAULT_EPISODE_LENGTH,
    }
}

pub fn pointmass_spec() -> EnvSpec {
    EnvSpec {
        kind: EnvKind::Pointmass(PointmassParams::default()),
        episode_length: DEFAULT_EPISODE_LENGTH,
    }
}

impl EnvSpec {
    /// Spec for a known environment name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(pendulum_spec()),
            "pointmass" => Ok(pointmass_spec()),
            other => Err(crate::Error::Config(format!(
                "unknown environment {other:?}; expected pendulum or pointmass"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EnvKind::Pendulum(_) => "pendulum",
            EnvKind::Pointmass(_) => "pointmass",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum(_) => 3,
            EnvKind::Pointmass(_) => 4,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum(_) => 2,
            EnvKind::Pointmass(_) => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum(_) => 1,
            EnvKind::Pointmass(_) => 2,
        }
    }

    pub fn reset_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            EnvKind::Pendulum(p) => p.reset(rng),
            EnvKind::Pointmass(p) => p.reset(rng),
        }
    }

    /// Exact transition. Actions are clamped to the unit box.
    pub fn step_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        match &self.kind {
            EnvKind::Pendulum(p) => p.step(s, a),
            EnvKind::Pointmass(p) => p.step(s, a),
        }
    }

    /// Exact reward for acting in state `s`; in `[0, 1]`.
    pub fn reward(&self, s: &[f64], _a: &[f64]) -> f64 {
        match &self.kind {
            EnvKind::Pendulum(p) => p.reward(s),
            EnvKind::Pointmass(p) => p.reward(s),
        }
    }

    pub fn observe(&self, s: &[f64]) -> Vec<f64> {
        match &self.kind {
            EnvKind::Pendulum(p) => p.observe(s),
            EnvKind::Pointmass(p) => p.observe(s),
        }
    }

    /// Brings a state produced by an approximate model back to canonical form.
    pub fn canonicalize(&self, s: &mut [f64]) {
        if let EnvKind::Pendulum(_) = self.kind {
            s[0] = pendulum::wrap_angle(s[0]);
        }
    }
}

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The fixed episode length was reached.
    pub done: bool,
}

/// A running episode of an [`EnvSpec`].
#[derive(Clone, Debug)]
pub struct Env {
    spec: EnvSpec,
    state: Vec<f64>,
    t: usize,
}

impl Env {
    pub fn new<R: Rng + ?Sized>(spec: EnvSpec, rng: &mut R) -> Self {
        let state = spec.reset_state(rng);
        Self { spec, state, t: 0 }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Starts a new episode and returns its first observation.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = self.spec.reset_state(rng);
        self.t = 0;
        self.observation()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: Vec<f64>) -> Result<()> {
        check_dim("environment state", self.spec.state_dim(), state.len())?;
        self.state = state;
        Ok(())
    }

    pub fn observation(&self) -> Vec<f64> {
        self.spec.observe(&self.state)
    }

    /// Step index within the current episode.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, a: &Action) -> Result<StepOutcome> {
        check_dim("environment action", self.spec.action_dim(), a.dim())?;
        let reward = self.spec.reward(&self.state, a.values());
        self.state = self.spec.step_state(&self.state, a.values());
        self.t += 1;
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done: self.t >= self.spec.episode_length,
        })
    }
}

/// Discounted exact-simulator return of `actions` from `state`, bootstrapped with `value_fn`.
pub fn oracle_return(
    spec: &EnvSpec,
    state: &[f64],
    actions: &[Action],
    value_fn: &dyn Fn(&[f64]) -> f64,
    gamma: f64,
) -> f64 {
    let mut s = state.to_vec();
    let mut total = 0.0;
    let mut disc = 1.0;
    for a in actions {
        total += disc * spec.reward(&s, a.values());
        s = spec.step_state(&s, a.values());
        disc *= gamma;
    }
    total + disc * value_fn(&s)
}

/// One row of a trajectory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// Writes `step, s0.., a0.., reward` rows as CSV.
pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = rows.first() {
        let mut header = vec!["step".to_string()];
        header.extend((0..first.state.len()).map(|i| format!("s{i}")));
        header.extend((0..first.action.len()).map(|i| format!("a{i}")));
        header.push("reward".into());
        w.write_record(&header).map_err(crate::io::csv_err)?;
    }
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.state.iter().chain(&r.action).map(f64::to_string));
        rec.push(r.reward.to_string());
        w.write_record(&rec).map_err(crate::io::csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}
