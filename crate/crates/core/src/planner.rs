//! MPPI search over action sequences scored by a [`ReturnTable`] objective.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::{score_batch, ObjectiveMode};
use crate::worldmodel::{Action, LatentModel};

/// Per-step diagonal Gaussian over an action sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDistribution {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
}

impl PlanDistribution {
    /// The search prior: zero mean, maximal spread.
    pub fn initial(horizon: usize, action_dim: usize, sigma_max: f64) -> Self {
        Self {
            mu: Array2::zeros((horizon, action_dim)),
            sigma: Array2::from_elem((horizon, action_dim), sigma_max),
        }
    }

    pub fn horizon(&self) -> usize {
        self.mu.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.mu.ncols()
    }

    /// The mean sequence as actions.
    pub fn mean_actions(&self) -> Vec<Action> {
        self.mu.rows().into_iter().map(|r| Action::new(r.to_vec())).collect()
    }
}

/// The Gaussian over the first planned action, used for acting and stored as a policy target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertPolicy {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ExpertPolicy {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One draw, clamped to the action box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        Action::new(
            self.mean
                .iter()
                .zip(&self.std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    /// The mean action, used for deterministic evaluation.
    pub fn mode(&self) -> Action {
        Action::new(self.mean.clone())
    }
}

pub fn expert_policy(plan: &PlanDistribution) -> ExpertPolicy {
    ExpertPolicy {
        mean: plan.mu.row(0).to_vec(),
        std: plan.sigma.row(0).to_vec(),
    }
}

/// Receding-horizon warm start: drop step 0 and append a zero-mean, maximal-spread step.
pub fn shift_warm_start(prev: &PlanDistribution, sigma_max: f64) -> PlanDistribution {
    let h = prev.horizon();
    let mut next = PlanDistribution::initial(h, prev.action_dim(), sigma_max);
    for u in 1..h {
        next.mu.row_mut(u - 1).assign(&prev.mu.row(u));
        next.sigma.row_mut(u - 1).assign(&prev.sigma.row(u));
    }
    next
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub num_samples: usize,
    pub num_elites: usize,
    pub num_policy_trajectories: usize,
    pub temperature: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub objective: ObjectiveMode,
    pub warm_start: bool,
    /// Dynamics head used to roll out policy-prior trajectories.
    pub policy_head: usize,
    pub gamma: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self::acting()
    }
}

impl PlannerConfig {
    /// Acting planner: horizon 6, depth-averaged objective, full budget.
    pub fn acting() -> Self {
        Self {
            horizon: 6,
            iterations: 6,
            num_samples: 512,
            num_elites: 64,
            num_policy_trajectories: 24,
            temperature: 0.5,
            sigma_min: 0.05,
            sigma_max: 2.0,
            objective: ObjectiveMode::AggregateHorizon,
            warm_start: true,
            policy_head: 0,
            gamma: 0.99,
        }
    }

    /// Reanalyze planner: horizon 3, terminal-depth pessimistic objective, reduced budget.
    pub fn reanalyze(beta: f64) -> Self {
        Self {
            horizon: 3,
            num_samples: 64,
            num_elites: 8,
            num_policy_trajectories: 3,
            objective: ObjectiveMode::Pessimistic { beta },
            warm_start: false,
            ..Self::acting()
        }
    }

    /// Reanalyze planner with the acting-sized budget.
    pub fn reanalyze_full_budget(beta: f64) -> Self {
        Self {
            num_samples: 512,
            num_elites: 64,
            num_policy_trajectories: 24,
            ..Self::reanalyze(beta)
        }
    }

    /// Iterations actually run for an action space of `action_dim` components.
    pub fn effective_iterations(&self, action_dim: usize) -> usize {
        if action_dim > 20 {
            self.iterations + 2
        } else {
            self.iterations
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 || self.iterations == 0 || self.num_samples == 0 || self.num_elites == 0 {
            return bad("planner horizon, iterations, samples and elites must be at least 1".into());
        }
        if self.num_elites > self.num_samples + self.num_policy_trajectories {
            return bad(format!(
                "num_elites {} exceeds the {} candidates per iteration",
                self.num_elites,
                self.num_samples + self.num_policy_trajectories
            ));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0 < self.sigma_min && self.sigma_min <= self.sigma_max) {
            return bad(format!(
                "sigma bounds must satisfy 0 < min <= max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        Ok(())
    }

    fn validate_for<M: LatentModel + ?Sized>(&self, model: &M) -> Result<()> {
        self.validate()?;
        self.objective.validate(model.num_dynamics(), model.num_values())?;
        if self.num_policy_trajectories > 0 && self.policy_head >= model.num_dynamics() {
            return Err(Error::HeadIndex {
                kind: "dynamics",
                index: self.policy_head,
                count: model.num_dynamics(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Elite scores, best first.
    pub elite_scores: Vec<f64>,
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub iterations: Vec<IterationTrace>,
    pub initial_mean_score: f64,
    pub final_mean_score: f64,
    /// The search ended worse than it started and the initial mean was returned.
    pub kept_initial_mean: bool,
}

/// Optimizes an action sequence from latent `z`.
pub fn plan<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    z: &[f64],
    model: &M,
    config: &PlannerConfig,
    warm_start: Option<&PlanDistribution>,
    rng: &mut R,
) -> Result<PlanDistribution> {
    plan_traced(z, model, config, warm_start, rng).map(|(p, _)| p)
}

/// [`plan`] plus a per-iteration record of elites and distribution snapshots.
pub fn plan_traced<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    z: &[f64],
    model: &M,
    config: &PlannerConfig,
    warm_start: Option<&PlanDistribution>,
    rng: &mut R,
) -> Result<(PlanDistribution, PlanTrace)> {
    config.validate_for(model)?;
    crate::error::check_dim("planner latent", model.latent_dim(), z.len())?;
    let h = config.horizon;
    let da = model.action_dim();

    let mut dist = PlanDistribution::initial(h, da, config.sigma_max);
    if let (true, Some(w)) = (config.warm_start, warm_start) {
        if w.horizon() != h || w.action_dim() != da {
            return Err(Error::Dimension {
                context: "warm start plan",
                expected: h * da,
                got: w.horizon() * w.action_dim(),
            });
        }
        dist.mu.assign(&w.mu.mapv(|v| v.clamp(-1.0, 1.0)));
    }
    let initial_mu = dist.mu.clone();

    let policy_seqs = policy_trajectories(z, model, config, rng);
    let n_pol = policy_seqs.first().map_or(0, Array2::nrows);
    let n = config.num_samples + n_pol;
    let k = config.num_elites.min(n);

    let mut trace = PlanTrace::default();
    let mut policy_scores: Option<Vec<f64>> = None;
    for _ in 0..config.effective_iterations(da) {
        let mut cands: Vec<Array2<f64>> = Vec::with_capacity(h);
        for u in 0..h {
            let mut a = Array2::zeros((n, da));
            if n_pol > 0 {
                a.slice_mut(ndarray::s![..n_pol, ..]).assign(&policy_seqs[u]);
            }
            for r in n_pol..n {
                for c in 0..da {
                    let e: f64 = rng.sample(StandardNormal);
                    a[[r, c]] = (dist.mu[[u, c]] + dist.sigma[[u, c]] * e).clamp(-1.0, 1.0);
                }
            }
            cands.push(a);
        }
        // Policy trajectories never change, so their scores are computed once.
        let scores: Vec<f64> = match &policy_scores {
            Some(ps) => {
                let sampled: Vec<Array2<f64>> = cands
                    .iter()
                    .map(|a| a.slice(ndarray::s![n_pol.., ..]).to_owned())
                    .collect();
                let mut s = ps.clone();
                s.extend(score_batch(model, z, &sampled, config.gamma, config.objective));
                s
            }
            None => score_batch(model, z, &cands, config.gamma, config.objective),
        };
        if policy_scores.is_none() {
            policy_scores = Some(scores[..n_pol].to_vec());
        }

        let mut order: Vec<usize> = (0..n).filter(|&c| scores[c].is_finite()).collect();
        if order.is_empty() {
            return Err(Error::PlannerFailed(format!(
                "every candidate scored non-finite under objective {}",
                config.objective
            )));
        }
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(k);

        let best = scores[order[0]];
        let mut w: Vec<f64> = order
            .iter()
            .map(|&c| ((scores[c] - best) / config.temperature).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);

        for u in 0..h {
            for c in 0..da {
                let mean: f64 = order.iter().zip(&w).map(|(&e, wi)| wi * cands[u][[e, c]]).sum();
                let var: f64 = order
                    .iter()
                    .zip(&w)
                    .map(|(&e, wi)| wi * (cands[u][[e, c]] - mean).powi(2))
                    .sum();
                dist.mu[[u, c]] = mean.clamp(-1.0, 1.0);
                dist.sigma[[u, c]] = var.sqrt().clamp(config.sigma_min, config.sigma_max);
            }
        }
        trace.iterations.push(IterationTrace {
            elite_scores: order.iter().map(|&c| scores[c]).collect(),
            mu: dist.mu.clone(),
            sigma: dist.sigma.clone(),
        });
    }

    // Score the starting and final means once; keep whichever is better.
    let pair: Vec<Array2<f64>> = (0..h)
        .map(|u| {
            let mut a = Array2::zeros((2, da));
            a.row_mut(0).assign(&initial_mu.row(u));
            a.row_mut(1).assign(&dist.mu.row(u));
            a
        })
        .collect();
    let s = score_batch(model, z, &pair, config.gamma, config.objective);
    trace.initial_mean_score = s[0];
    trace.final_mean_score = s[1];
    if s[0] > s[1] || (!s[1].is_finite() && s[0].is_finite()) {
        dist.mu = initial_mu;
        trace.kept_initial_mean = true;
    }
    Ok((dist, trace))
}

/// Policy-prior sequences rolled through one dynamics head, laid out per depth.
fn policy_trajectories<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    z: &[f64],
    model: &M,
    config: &PlannerConfig,
    rng: &mut R,
) -> Vec<Array2<f64>> {
    let p = config.num_policy_trajectories;
    if p == 0 {
        return Vec::new();
    }
    let da = model.action_dim();
    let mut latent = Array2::from_shape_fn((p, z.len()), |(_, c)| z[c]);
    let mut out = Vec::with_capacity(config.horizon);
    for u in 0..config.horizon {
        let Some((mean, log_std)) = model.policy(&latent) else {
            return Vec::new();
        };
        let a = Array2::from_shape_fn((p, da), |(r, c)| {
            let e: f64 = rng.sample(StandardNormal);
            (mean[[r, c]] + log_std[[r, c]].exp() * e).tanh()
        });
        if u + 1 < config.horizon {
            latent = model.next_latents(config.policy_head, &latent, &a);
        }
        out.push(a);
    }
    out
}

/// The policy prior's mean actions rolled along dynamics head `head`; `None` without a prior.
pub fn policy_mean_sequence<M: LatentModel + ?Sized>(
    z: &[f64],
    model: &M,
    head: usize,
    horizon: usize,
) -> Option<Vec<Action>> {
    let mut latent = crate::worldmodel::row(z);
    let mut out = Vec::with_capacity(horizon);
    for u in 0..horizon {
        let (mean, _) = model.policy(&latent)?;
        let a = mean.mapv(f64::tanh);
        if u + 1 < horizon {
            latent = model.next_latents(head, &latent, &a);
        }
        out.push(Action::new(a.row(0).to_vec()));
    }
    Some(out)
}

/// Mean score of the candidates in `actions` under `objective`; a convenience for studies.
pub fn score_sequences<M: LatentModel + ?Sized>(
    z: &[f64],
    model: &M,
    actions: &[Array2<f64>],
    objective: ObjectiveMode,
    gamma: f64,
) -> Vec<f64> {
    score_batch(model, z, actions, gamma, objective)
}

/// Stacks single sequences into the per-depth batch layout used by the scorers.
pub fn stack_sequences(seqs: &[Vec<Action>]) -> Vec<Array2<f64>> {
    let h = seqs[0].len();
    let da = seqs[0][0].dim();
    (0..h)
        .map(|u| Array2::from_shape_fn((seqs.len(), da), |(r, c)| seqs[r][u].values()[c]))
        .collect()
}

/// The sequence of row `r` from the per-depth layout.
pub fn unstack_row(actions: &[Array2<f64>], r: usize) -> Vec<Action> {
    actions
        .iter()
        .map(|a| Action::new(a.index_axis(Axis(0), r).to_vec()))
        .collect()
}
