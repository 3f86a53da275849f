//! Return estimates and planner objectives.
//!
//! A [`ReturnTable`] holds `q[i][j][h]`: the discounted sum of `h` predicted
//! rewards along dynamics head `i`'s rollout plus the `γ^h`-discounted value of
//! head `j` at the reached latent. Every planner objective is a reduction of it.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worldmodel::{Action, LatentModel};

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnTable {
    q: Vec<f64>,
    dynamics_heads: usize,
    value_heads: usize,
    horizon: usize,
    gamma: f64,
}

impl ReturnTable {
    /// Builds a table from `f(i, j, h)` with zero-based heads and one-based depth `h`.
    pub fn from_fn(
        dynamics_heads: usize,
        value_heads: usize,
        horizon: usize,
        gamma: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(dynamics_heads >= 1 && value_heads >= 1 && horizon >= 1);
        let mut q = Vec::with_capacity(dynamics_heads * value_heads * horizon);
        for i in 0..dynamics_heads {
            for j in 0..value_heads {
                for h in 1..=horizon {
                    q.push(f(i, j, h));
                }
            }
        }
        Self {
            q,
            dynamics_heads,
            value_heads,
            horizon,
            gamma,
        }
    }

    pub fn dynamics_heads(&self) -> usize {
        self.dynamics_heads
    }

    pub fn value_heads(&self) -> usize {
        self.value_heads
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    fn index(&self, i: usize, j: usize, h: usize) -> usize {
        debug_assert!(i < self.dynamics_heads && j < self.value_heads && (1..=self.horizon).contains(&h));
        (i * self.value_heads + j) * self.horizon + (h - 1)
    }

    /// Estimate for dynamics head `i`, value head `j`, depth `h` (one-based).
    #[inline]
    pub fn get(&self, i: usize, j: usize, h: usize) -> f64 {
        self.q[self.index(i, j, h)]
    }

    /// All `N_f · N_v` estimates at depth `h`.
    pub fn at_depth(&self, h: usize) -> impl Iterator<Item = f64> + '_ {
        assert!(
            (1..=self.horizon).contains(&h),
            "depth {h} outside 1..={}",
            self.horizon
        );
        self.q.iter().skip(h - 1).step_by(self.horizon).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.q.iter_mut().for_each(|v| *v += c);
        out
    }

    /// Nested `q[i][j][h-1]` arrays.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.dynamics_heads)
            .map(|i| {
                (0..self.value_heads)
                    .map(|j| (1..=self.horizon).map(|h| self.get(i, j, h)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(q: &[Vec<Vec<f64>>], gamma: f64) -> Result<Self> {
        let nf = q.len();
        let nv = q.first().map_or(0, Vec::len);
        let h = q.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if nf == 0 || nv == 0 || h == 0 {
            return Err(Error::Format("empty return table".into()));
        }
        if q.iter().any(|r| r.len() != nv || r.iter().any(|d| d.len() != h)) {
            return Err(Error::Format("ragged return table".into()));
        }
        Ok(Self::from_fn(nf, nv, h, gamma, |i, j, d| q[i][j][d - 1]))
    }
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    gamma: f64,
    q: Vec<Vec<Vec<f64>>>,
}

impl Serialize for ReturnTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TableDoc {
            gamma: self.gamma,
            q: self.to_nested(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReturnTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = TableDoc::deserialize(d)?;
        Self::from_nested(&doc.q, doc.gamma).map_err(serde::de::Error::custom)
    }
}

/// Planner objective, a reduction of a [`ReturnTable`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// One dynamics head and one value head at the terminal depth.
    SingleHead { dynamics: usize, value: usize },
    /// Ensemble mean at the terminal depth.
    EnsembleMean,
    /// Ensemble mean averaged over depths `1..=H`.
    AggregateHorizon,
    /// Ensemble mean minus `beta` standard errors, at the terminal depth.
    Pessimistic { beta: f64 },
}

impl std::fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::SingleHead { dynamics, value } => write!(f, "single_head({dynamics},{value})"),
            Self::EnsembleMean => write!(f, "ensemble_mean"),
            Self::AggregateHorizon => write!(f, "aggregate_horizon"),
            Self::Pessimistic { beta } => write!(f, "pessimistic({beta})"),
        }
    }
}

impl ObjectiveMode {
    pub fn validate(&self, dynamics_heads: usize, value_heads: usize) -> Result<()> {
        match *self {
            Self::Pessimistic { beta } if !(beta >= 0.0) => Err(Error::Config(format!(
                "pessimism coefficient must be non-negative, got {beta}"
            ))),
            Self::SingleHead { dynamics, .. } if dynamics >= dynamics_heads => Err(Error::HeadIndex {
                kind: "dynamics",
                index: dynamics,
                count: dynamics_heads,
            }),
            Self::SingleHead { value, .. } if value >= value_heads => Err(Error::HeadIndex {
                kind: "value",
                index: value,
                count: value_heads,
            }),
            _ => Ok(()),
        }
    }

    /// Scores `table`. Callers validate the mode first.
    pub fn evaluate(&self, table: &ReturnTable) -> f64 {
        let h = table.horizon();
        match *self {
            Self::SingleHead { dynamics, value } => table.get(dynamics, value, h),
            Self::EnsembleMean => ensemble_mean(table, h),
            Self::AggregateHorizon => aggregate_horizon(table),
            Self::Pessimistic { beta } => ensemble_mean(table, h) - beta * variance_of_mean(table, h).sqrt(),
        }
    }
}

/// Mean over all `(i, j)` estimates at depth `h`.
pub fn ensemble_mean(table: &ReturnTable, h: usize) -> f64 {
    let n = (table.dynamics_heads * table.value_heads) as f64;
    table.at_depth(h).sum::<f64>() / n
}

/// Estimated variance of the ensemble mean at depth `h`; zero for a single-member ensemble.
pub fn variance_of_mean(table: &ReturnTable, h: usize) -> f64 {
    let n = table.dynamics_heads * table.value_heads;
    if n < 2 {
        return 0.0;
    }
    let first = table.at_depth(h).next().expect("non-empty");
    if table.at_depth(h).all(|q| q == first) {
        return 0.0;
    }
    let mean = ensemble_mean(table, h);
    let ss: f64 = table.at_depth(h).map(|q| (q - mean) * (q - mean)).sum();
    ss / (n * (n - 1)) as f64
}

/// Uniform average of the ensemble mean over depths `1..=H`.
pub fn aggregate_horizon(table: &ReturnTable) -> f64 {
    let h = table.horizon;
    (1..=h).map(|d| ensemble_mean(table, d)).sum::<f64>() / h as f64
}

/// `ensemble_mean − β · sqrt(variance_of_mean)` at depth `h`.
pub fn pessimistic_objective(table: &ReturnTable, beta: f64, h: usize) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!(
            "pessimism coefficient must be non-negative, got {beta}"
        )));
    }
    Ok(ensemble_mean(table, h) - beta * variance_of_mean(table, h).sqrt())
}

/// Rolls every dynamics head along `actions` from `z` and fills the full table.
pub fn rollout_returns<M: LatentModel + ?Sized>(
    model: &M,
    z: &[f64],
    actions: &[Action],
    gamma: f64,
) -> Result<ReturnTable> {
    if actions.is_empty() {
        return Err(Error::Config("rollout horizon must be at least 1".into()));
    }
    crate::error::check_dim("rollout latent", model.latent_dim(), z.len())?;
    for a in actions {
        crate::error::check_dim("rollout action", model.action_dim(), a.dim())?;
    }
    let per_depth: Vec<Array2<f64>> = actions.iter().map(|a| crate::worldmodel::row(a.values())).collect();
    let mut tables = rollout_returns_batch(model, z, &per_depth, gamma);
    let table = tables.pop().expect("one candidate");
    if let Some(pos) = table.q.iter().position(|v| !v.is_finite()) {
        let h = pos % table.horizon + 1;
        let i = pos / (table.horizon * table.value_heads);
        return Err(Error::NonFinite(format!(
            "return estimate for dynamics head {i} at depth {h}"
        )));
    }
    Ok(table)
}

/// Batched rollout: `actions[u]` holds the depth-`u` action of every candidate as rows.
///
/// Rewards along each head's trajectory are predicted once and shared by every
/// value head and depth. The depth-0 reward does not depend on the head and is
/// predicted once for all heads.
pub fn rollout_returns_batch<M: LatentModel + ?Sized>(
    model: &M,
    z: &[f64],
    actions: &[Array2<f64>],
    gamma: f64,
) -> Vec<ReturnTable> {
    rollout_masked(model, z, actions, gamma, None)
}

/// Scores every candidate under `objective`, rolling out only what the objective reads.
///
/// Matches scoring the full [`rollout_returns_batch`] tables bit for bit.
pub fn score_batch<M: LatentModel + ?Sized>(
    model: &M,
    z: &[f64],
    actions: &[Array2<f64>],
    gamma: f64,
    objective: ObjectiveMode,
) -> Vec<f64> {
    rollout_masked(model, z, actions, gamma, Some(objective))
        .iter()
        .map(|t| objective.evaluate(t))
        .collect()
}

/// Entries `objective` never reads are left as NaN.
fn rollout_masked<M: LatentModel + ?Sized>(
    model: &M,
    z: &[f64],
    actions: &[Array2<f64>],
    gamma: f64,
    objective: Option<ObjectiveMode>,
) -> Vec<ReturnTable> {
    let horizon = actions.len();
    let n = actions[0].nrows();
    let nf = model.num_dynamics();
    let nv = model.num_values();
    let (only_head, only_value, terminal_only) = match objective {
        None | Some(ObjectiveMode::AggregateHorizon) => (None, None, false),
        Some(ObjectiveMode::SingleHead { dynamics, value }) => (Some(dynamics), Some(value), true),
        Some(ObjectiveMode::EnsembleMean | ObjectiveMode::Pessimistic { .. }) => (None, None, true),
    };
    let z0 = Array2::from_shape_fn((n, z.len()), |(_, c)| z[c]);
    let r0 = model.rewards(&z0, &actions[0]);

    // Per head: q values laid out as [candidate][j][h].
    let head_rollout = |i: usize| -> Vec<f64> {
        let mut out = vec![f64::NAN; n * nv * horizon];
        if only_head.is_some_and(|h| h != i) {
            return out;
        }
        let mut ret = vec![0.0; n];
        let mut latent = z0.clone();
        let mut disc = 1.0;
        for u in 0..horizon {
            let r = if u == 0 {
                r0.clone()
            } else {
                model.rewards(&latent, &actions[u])
            };
            for (acc, rv) in ret.iter_mut().zip(&r) {
                *acc += disc * rv;
            }
            disc *= gamma;
            latent = model.next_latents(i, &latent, &actions[u]);
            if terminal_only && u + 1 < horizon {
                continue;
            }
            for j in (0..nv).filter(|&j| only_value.is_none_or(|v| v == j)) {
                let v = model.values(j, &latent, false);
                for c in 0..n {
                    out[(c * nv + j) * horizon + u] = ret[c] + disc * v[c];
                }
            }
        }
        out
    };

    #[cfg(feature = "parallel")]
    let per_head: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..nf).into_par_iter().map(head_rollout).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_head: Vec<Vec<f64>> = (0..nf).map(head_rollout).collect();

    (0..n)
        .map(|c| {
            let mut q = Vec::with_capacity(nf * nv * horizon);
            for head in &per_head {
                q.extend_from_slice(&head[c * nv * horizon..(c + 1) * nv * horizon]);
            }
            ReturnTable {
                q,
                dynamics_heads: nf,
                value_heads: nv,
                horizon,
                gamma,
            }
        })
        .collect()
}

/// Which dynamics heads the one-step value target averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTargetHeads {
    #[default]
    All,
    First,
}

/// One-step imagined value targets for each row of `z`.
///
/// Samples `a ~ π(·|z)` (zero actions if the model has no policy), then averages
/// `R(z, a) + γ·V̄_j(f_i(z, a))` over value heads `j` and the selected dynamics heads `i`,
/// using the EMA target value heads.
pub fn value_target<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    z: &Array2<f64>,
    gamma: f64,
    heads: ValueTargetHeads,
    rng: &mut R,
) -> Vec<f64> {
    let b = z.nrows();
    let da = model.action_dim();
    let a = match model.policy(z) {
        Some((mean, log_std)) => Array2::from_shape_fn((b, da), |(r, c)| {
            let e: f64 = rng.sample(StandardNormal);
            (mean[[r, c]] + log_std[[r, c]].exp() * e).tanh()
        }),
        None => Array2::zeros((b, da)),
    };
    let r = model.rewards(z, &a);
    let dyn_heads = match heads {
        ValueTargetHeads::All => model.num_dynamics(),
        ValueTargetHeads::First => 1,
    };
    let nv = model.num_values();
    let mut acc = vec![0.0; b];
    for i in 0..dyn_heads {
        let next = model.next_latents(i, z, &a);
        for j in 0..nv {
            for (slot, v) in acc.iter_mut().zip(model.values(j, &next, true)) {
                *slot += v;
            }
        }
    }
    let denom = (dyn_heads * nv) as f64;
    acc.iter().zip(&r).map(|(s, rv)| rv + gamma * s / denom).collect()
}
