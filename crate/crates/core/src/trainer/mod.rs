//! Acting, learning, reanalyze and evaluation loop.

pub mod adam;
pub mod losses;

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::planner::{expert_policy, plan, shift_warm_start, ExpertPolicy, PlanDistribution, PlannerConfig};
use crate::replay::{InsertMode, ReanalyzeReport, ReplayBuffer, Transition};
use crate::returns::{value_target, ValueTargetHeads};
use crate::worldmodel::{gradient, Action, EnsembleData, LatentModel, WorldModel};

pub use adam::Adam;
pub use losses::{build_losses, Batch, LossInputs, LossWeights, RawTerms};

/// `clamp(1 − 5/L, γ_min, γ_max)`.
pub fn discount_for_episode_length(episode_length: usize, gamma_min: f64, gamma_max: f64) -> f64 {
    assert!(episode_length >= 1, "episode length must be positive");
    (1.0 - 5.0 / episode_length as f64).clamp(gamma_min, gamma_max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Gradient updates per environment step.
    pub utd: usize,
    /// Environment steps between reanalyze passes.
    pub reanalyze_interval: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub encoder_lr_scale: f64,
    pub grad_clip_norm: f64,
    pub tau_ema: f64,
    pub rho: f64,
    pub entropy_coeff: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Pessimism coefficient of the reanalyze objective.
    pub beta: f64,
    pub seed: u64,
    /// Unroll depth of the training losses.
    pub horizon: usize,
    pub consistency_coef: f64,
    pub reward_coef: f64,
    pub value_coef: f64,
    pub policy_coef: f64,
    pub consistency_stop_grad: bool,
    pub value_target_heads: ValueTargetHeads,
    pub total_steps: usize,
    /// Uniformly random actions before planning and updates begin.
    pub seed_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_at_start: bool,
    pub reanalyze_batch: usize,
    /// Stored transitions required before reanalyze starts.
    pub reanalyze_start: usize,
    pub buffer_capacity: usize,
    pub insert_mode: InsertMode,
    /// End the run after an evaluation whose mean return reaches this value.
    pub stop_at_return: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            utd: 4,
            reanalyze_interval: 2,
            batch_size: 64,
            learning_rate: 3e-4,
            encoder_lr_scale: 0.3,
            grad_clip_norm: 20.0,
            tau_ema: 0.01,
            rho: 0.5,
            entropy_coeff: 1e-4,
            gamma_min: 0.95,
            gamma_max: 0.995,
            beta: 0.0,
            seed: 0,
            horizon: 3,
            consistency_coef: 20.0,
            reward_coef: 0.1,
            value_coef: 0.1,
            policy_coef: 1.0,
            consistency_stop_grad: true,
            value_target_heads: ValueTargetHeads::All,
            total_steps: 30_000,
            seed_steps: 1_000,
            eval_interval: 2_000,
            eval_episodes: 5,
            eval_at_start: true,
            reanalyze_batch: 20,
            reanalyze_start: 1_000,
            buffer_capacity: 100_000,
            insert_mode: InsertMode::PerStep,
            stop_at_return: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reanalyze_interval == 0 {
            return bad("reanalyze_interval must be at least 1".into());
        }
        if self.batch_size == 0 || self.horizon == 0 {
            return bad("batch_size and horizon must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must lie in (0, 1], got {}", self.rho));
        }
        if !(self.gamma_min <= self.gamma_max && self.gamma_min > 0.0 && self.gamma_max < 1.0) {
            return bad(format!(
                "gamma bounds must satisfy 0 < min <= max < 1, got [{}, {}]",
                self.gamma_min, self.gamma_max
            ));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.tau_ema >= 0.0 && self.tau_ema <= 1.0) {
            return bad(format!("tau_ema must lie in [0, 1], got {}", self.tau_ema));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip_norm > 0.0 && self.encoder_lr_scale >= 0.0) {
            return bad("learning_rate and grad_clip_norm must be positive".into());
        }
        if self.eval_interval == 0 || self.buffer_capacity == 0 {
            return bad("eval_interval and buffer_capacity must be at least 1".into());
        }
        Ok(())
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights {
            rho: self.rho,
            consistency: self.consistency_coef,
            reward: self.reward_coef,
            value: self.value_coef,
            policy: self.policy_coef,
            entropy: self.entropy_coeff,
            consistency_stop_grad: self.consistency_stop_grad,
        }
    }
}

/// One gradient step's losses (unweighted) and gradient norms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub consistency_loss: f64,
    pub reward_loss: f64,
    pub value_loss: f64,
    pub policy_kl: f64,
    pub policy_entropy: f64,
    /// Weighted objective that was differentiated.
    pub total_loss: f64,
    pub grad_norm_raw: f64,
    /// Norm actually applied, after clipping.
    pub grad_norm: f64,
    pub update: u64,
}

/// One evaluation row of the metrics stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub consistency_loss: f64,
    pub reward_loss: f64,
    pub value_loss: f64,
    pub policy_kl: f64,
    pub policy_entropy: f64,
    pub grad_norm: f64,
    /// Gradient updates since the previous row.
    pub updates: usize,
    /// Policy targets refreshed since the previous row.
    pub reanalyzed: usize,
}

/// Wall-clock companion of a [`MetricsRow`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub env_step: usize,
    pub wall_ms: f64,
    pub act_ms: f64,
    pub update_ms: f64,
    pub reanalyze_ms: f64,
    pub eval_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub timing: Vec<TimingRow>,
    pub reanalyze_passes: usize,
    pub reanalyze_ms_total: f64,
}

impl RunOutput {
    pub fn final_return(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.eval_return_mean)
    }
}

/// Per-seed agent state.
pub struct Trainer {
    pub spec: EnvSpec,
    pub config: TrainConfig,
    pub acting: PlannerConfig,
    pub reanalyze: PlannerConfig,
    pub model: WorldModel,
    pub buffer: ReplayBuffer,
    pub gamma: f64,
    optimizer: Adam,
    env: Env,
    act_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    reanalyze_rng: ChaCha8Rng,
    warm: Option<PlanDistribution>,
    episode_id: u64,
    env_step: usize,
    updates: u64,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

impl Trainer {
    /// Fresh agent. The discount of both planners and the value targets follows the episode length.
    pub fn new(
        spec: EnvSpec,
        model: WorldModel,
        config: TrainConfig,
        mut acting: PlannerConfig,
        mut reanalyze: PlannerConfig,
    ) -> Result<Self> {
        config.validate()?;
        acting.validate()?;
        reanalyze.validate()?;
        crate::error::check_dim("model observation", spec.obs_dim(), model.config.obs_dim)?;
        crate::error::check_dim("model action", spec.action_dim(), model.config.action_dim)?;
        let gamma = discount_for_episode_length(spec.episode_length, config.gamma_min, config.gamma_max);
        acting.gamma = gamma;
        reanalyze.gamma = gamma;
        let mut act_rng = stream(config.seed, 1);
        let env = Env::new(spec.clone(), &mut act_rng);
        Ok(Self {
            optimizer: Adam::new(&model.nets),
            buffer: ReplayBuffer::new(config.buffer_capacity, config.insert_mode),
            update_rng: stream(config.seed, 2),
            reanalyze_rng: stream(config.seed, 3),
            act_rng,
            env,
            spec,
            config,
            acting,
            reanalyze,
            model,
            gamma,
            warm: None,
            episode_id: 0,
            env_step: 0,
            updates: 0,
        })
    }

    pub fn env_step(&self) -> usize {
        self.env_step
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Plans (or acts randomly during seeding), steps the environment and inserts the transition.
    pub fn act_step(&mut self) -> Result<Transition> {
        let obs = self.env.observation();
        let sim_state = self.env.state().to_vec();
        let da = self.spec.action_dim();
        let (action, target) = if self.env_step < self.config.seed_steps {
            let a = Action::new((0..da).map(|_| self.act_rng.random_range(-1.0..1.0)).collect());
            let target = ExpertPolicy {
                mean: vec![0.0; da],
                std: vec![self.acting.sigma_max; da],
            };
            (a, target)
        } else {
            let z = self.model.encode(&obs)?.into_inner();
            let warm = if self.acting.warm_start {
                self.warm.as_ref()
            } else {
                None
            };
            let p = plan(&z, &self.model, &self.acting, warm, &mut self.act_rng)?;
            let e = expert_policy(&p);
            self.warm = Some(shift_warm_start(&p, self.acting.sigma_max));
            (e.sample(&mut self.act_rng), e)
        };
        let step_index = self.env.t();
        let out = self.env.step(&action)?;
        let t = Transition {
            obs,
            action,
            reward: out.reward,
            done: out.done,
            policy_target: target,
            episode_id: self.episode_id,
            step_index,
            target_version: 0,
            sim_state: Some(sim_state),
        };
        if out.done {
            self.warm = None;
            self.env.reset(&mut self.act_rng);
            self.episode_id += 1;
        }
        self.buffer.insert(t.clone());
        self.env_step += 1;
        Ok(t)
    }

    /// One gradient step on a sampled batch, followed by the EMA target update.
    pub fn update_step(&mut self) -> Result<LossReport> {
        let span = self.config.horizon + 1;
        let segments = self
            .buffer
            .sample_sequences(self.config.batch_size, span, &mut self.update_rng)?;
        let batch = Batch::from_segments(&segments);
        self.update_on(&batch)
    }

    /// One gradient step on `batch`.
    pub fn update_on(&mut self, batch: &Batch) -> Result<LossReport> {
        let cfg = &self.config;
        let value_targets: Vec<Vec<f64>> = batch.obs[..batch.horizon()]
            .iter()
            .map(|o| {
                let z = self.model.encode_batch(o);
                value_target(
                    &self.model,
                    &z,
                    self.gamma,
                    cfg.value_target_heads,
                    &mut self.update_rng,
                )
            })
            .collect();
        let head_weights: Option<Vec<Vec<f64>>> = match self.model.config.ensemble_data {
            EnsembleData::Shared => None,
            EnsembleData::Bootstrap => Some(
                (0..self.model.config.dynamics_heads)
                    .map(|_| {
                        let b = batch.len();
                        let mut w = vec![0.0; b];
                        for _ in 0..b {
                            w[self.update_rng.random_range(0..b)] += 1.0;
                        }
                        w
                    })
                    .collect(),
            ),
        };
        let inputs = LossInputs {
            batch,
            value_targets: &value_targets,
            head_row_weights: head_weights.as_deref(),
            codec: &self.model.config.codec,
        };
        let weights = cfg.loss_weights();
        let mut raw = RawTerms::default();
        let g = gradient(&self.model.nets, &self.model.config, |mt| {
            build_losses(mt, &inputs, &weights, &mut raw)
        })?;
        let mut grads = g.grads;
        let norm_raw = grads.global_norm();
        if norm_raw > cfg.grad_clip_norm {
            grads.scale(cfg.grad_clip_norm / norm_raw);
        }
        let grad_norm = grads.global_norm();
        let enc = self.model.nets.encoder_arrays();
        let (lr, enc_lr) = (cfg.learning_rate, cfg.learning_rate * cfg.encoder_lr_scale);
        self.optimizer
            .step(&mut self.model.nets, &grads, |id| if id < enc { enc_lr } else { lr });
        self.model.ema_update(cfg.tau_ema);
        self.updates += 1;
        Ok(LossReport {
            consistency_loss: raw.consistency,
            reward_loss: raw.reward,
            value_loss: raw.value,
            policy_kl: raw.policy_kl,
            policy_entropy: raw.policy_entropy,
            total_loss: g.loss,
            grad_norm_raw: norm_raw,
            grad_norm,
            update: self.updates,
        })
    }

    /// Refreshes stored policy targets with the reanalyze planner.
    pub fn reanalyze_pass(&mut self) -> ReanalyzeReport {
        let model = &self.model;
        self.buffer.reanalyze_pass(
            model,
            |t: &Transition| model.encode_batch(&crate::worldmodel::row(&t.obs)).row(0).to_vec(),
            &self.reanalyze,
            self.config.reanalyze_batch,
            &mut self.reanalyze_rng,
        )
    }

    /// Deterministic-mean evaluation returns; independent of the training streams.
    pub fn evaluate(&self, episodes: usize, eval_seed: u64) -> Result<Vec<f64>> {
        evaluate_planner(
            &self.spec,
            &self.model,
            |_, obs| Ok(self.model.encode(obs)?.into_inner()),
            &self.acting,
            episodes,
            eval_seed,
        )
    }

    /// Runs the configured number of environment steps, calling `observe` on each metrics row.
    pub fn run(&mut self, mut observe: impl FnMut(&MetricsRow, &TimingRow)) -> Result<RunOutput> {
        let start = Instant::now();
        let mut out = RunOutput::default();
        let mut acc = Accum::default();
        let mut timing = TimingRow::default();
        let seed = self.config.seed;
        let eval_seed = move |step: usize| seed.wrapping_mul(1_000_003).wrapping_add(step as u64);

        if self.config.eval_at_start {
            let t0 = Instant::now();
            let returns = self.evaluate(self.config.eval_episodes, eval_seed(0))?;
            timing.eval_ms += ms(t0);
            self.emit(&mut out, &mut acc, &mut timing, &returns, start, &mut observe);
        }
        while self.env_step < self.config.total_steps {
            let t0 = Instant::now();
            self.act_step()?;
            timing.act_ms += ms(t0);

            if self.env_step >= self.config.seed_steps {
                let t0 = Instant::now();
                for _ in 0..self.config.utd {
                    match self.update_step() {
                        Ok(r) => acc.add(&r),
                        Err(Error::InsufficientData(_)) => break,
                        Err(e) => return Err(e),
                    }
                }
                timing.update_ms += ms(t0);
            }
            if self.env_step % self.config.reanalyze_interval == 0 && self.buffer.len() >= self.config.reanalyze_start {
                let t0 = Instant::now();
                acc.reanalyzed += self.reanalyze_pass().refreshed;
                let dt = ms(t0);
                timing.reanalyze_ms += dt;
                out.reanalyze_ms_total += dt;
                out.reanalyze_passes += 1;
            }
            if self.env_step % self.config.eval_interval == 0 || self.env_step == self.config.total_steps {
                let t0 = Instant::now();
                let returns = self.evaluate(self.config.eval_episodes, eval_seed(self.env_step))?;
                timing.eval_ms += ms(t0);
                let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
                self.emit(&mut out, &mut acc, &mut timing, &returns, start, &mut observe);
                if self.config.stop_at_return.is_some_and(|s| mean >= s) {
                    break;
                }
            }
        }
        Ok(out)
    }

    fn emit(
        &self,
        out: &mut RunOutput,
        acc: &mut Accum,
        timing: &mut TimingRow,
        returns: &[f64],
        start: Instant,
        observe: &mut impl FnMut(&MetricsRow, &TimingRow),
    ) {
        let (mean, std) = mean_std(returns);
        let row = acc.row(self.env_step, mean, std);
        timing.env_step = self.env_step;
        timing.wall_ms = ms(start);
        observe(&row, timing);
        out.metrics.push(row);
        out.timing.push(std::mem::take(timing));
        *acc = Accum::default();
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Mean and sample standard deviation (zero for fewer than two values).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Default)]
struct Accum {
    sum: LossReport,
    updates: usize,
    reanalyzed: usize,
}

impl Accum {
    fn add(&mut self, r: &LossReport) {
        self.sum.consistency_loss += r.consistency_loss;
        self.sum.reward_loss += r.reward_loss;
        self.sum.value_loss += r.value_loss;
        self.sum.policy_kl += r.policy_kl;
        self.sum.policy_entropy += r.policy_entropy;
        self.sum.grad_norm += r.grad_norm;
        self.updates += 1;
    }

    fn row(&self, env_step: usize, mean: f64, std: f64) -> MetricsRow {
        let n = self.updates.max(1) as f64;
        MetricsRow {
            env_step,
            eval_return_mean: mean,
            eval_return_std: std,
            consistency_loss: self.sum.consistency_loss / n,
            reward_loss: self.sum.reward_loss / n,
            value_loss: self.sum.value_loss / n,
            policy_kl: self.sum.policy_kl / n,
            policy_entropy: self.sum.policy_entropy / n,
            grad_norm: self.sum.grad_norm / n,
            updates: self.updates,
            reanalyzed: self.reanalyzed,
        }
    }
}

/// Episode returns of a planner acting with its mean first action.
///
/// `encode(state, obs)` maps the simulator state and observation to the model's latent.
pub fn evaluate_planner<M, E>(
    spec: &EnvSpec,
    model: &M,
    encode: E,
    planner: &PlannerConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    M: LatentModel + ?Sized,
    E: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    (0..episodes)
        .map(|k| {
            let mut env_rng = stream(seed, 100 + 2 * k as u64);
            let mut plan_rng = stream(seed, 101 + 2 * k as u64);
            let mut env = Env::new(spec.clone(), &mut env_rng);
            let mut warm: Option<PlanDistribution> = None;
            let mut total = 0.0;
            loop {
                let z = encode(env.state(), &env.observation())?;
                let w = if planner.warm_start { warm.as_ref() } else { None };
                let p = plan(&z, model, planner, w, &mut plan_rng)?;
                let a = expert_policy(&p).mode();
                warm = Some(shift_warm_start(&p, planner.sigma_max));
                let out = env.step(&a)?;
                total += out.reward;
                if out.done {
                    return Ok(total);
                }
            }
        })
        .collect()
}

/// Rows of `B × obs` from replayed observations; used by studies that encode buffer states.
pub fn stack_obs(obs: &[&[f64]]) -> Array2<f64> {
    Array2::from_shape_fn((obs.len(), obs[0].len()), |(r, c)| obs[r][c])
}
