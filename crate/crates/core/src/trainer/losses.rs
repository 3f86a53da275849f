//! Training losses expressed on a [`ModelTape`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::replay::Transition;
use crate::tape::Var;
use crate::worldmodel::{ModelTape, TwoHotCodec};

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
/// Stored action-space means are pulled inside the box before `atanh`.
const TARGET_MEAN_LIMIT: f64 = 0.995;
const MIN_TARGET_STD: f64 = 1e-3;

/// `horizon + 1` consecutive steps for `B` segments, laid out per depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `horizon + 1` arrays of `B × obs_dim`.
    pub obs: Vec<Array2<f64>>,
    /// `horizon` arrays of `B × action_dim`.
    pub actions: Vec<Array2<f64>>,
    /// `horizon` reward vectors of length `B`.
    pub rewards: Vec<Vec<f64>>,
    /// Stored expert means and standard deviations, `horizon` arrays of `B × action_dim`.
    pub target_mean: Vec<Array2<f64>>,
    pub target_std: Vec<Array2<f64>>,
}

impl Batch {
    pub fn from_segments(segments: &[Vec<&Transition>]) -> Self {
        let b = segments.len();
        let span = segments[0].len();
        let h = span - 1;
        let od = segments[0][0].obs.len();
        let da = segments[0][0].action.dim();
        let obs = (0..span)
            .map(|u| Array2::from_shape_fn((b, od), |(r, c)| segments[r][u].obs[c]))
            .collect();
        let actions = (0..h)
            .map(|u| Array2::from_shape_fn((b, da), |(r, c)| segments[r][u].action.values()[c]))
            .collect();
        let rewards = (0..h).map(|u| segments.iter().map(|s| s[u].reward).collect()).collect();
        let target_mean = (0..h)
            .map(|u| Array2::from_shape_fn((b, da), |(r, c)| segments[r][u].policy_target.mean[c]))
            .collect();
        let target_std = (0..h)
            .map(|u| Array2::from_shape_fn((b, da), |(r, c)| segments[r][u].policy_target.std[c]))
            .collect();
        Self {
            obs,
            actions,
            rewards,
            target_mean,
            target_std,
        }
    }

    pub fn len(&self) -> usize {
        self.obs[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rho: f64,
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
    pub entropy: f64,
    /// Treat encoder latents of later observations as fixed targets.
    pub consistency_stop_grad: bool,
}

/// Unweighted per-term values recorded while building the graph.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawTerms {
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
    pub policy_kl: f64,
    pub policy_entropy: f64,
}

/// Everything the loss graph needs besides parameters.
pub struct LossInputs<'a> {
    pub batch: &'a Batch,
    /// `horizon` vectors of one-step value targets, one entry per row.
    pub value_targets: &'a [Vec<f64>],
    /// Per dynamics head row multiplicities for bootstrapped ensembles.
    pub head_row_weights: Option<&'a [Vec<f64>]>,
    pub codec: &'a TwoHotCodec,
}

fn two_hot_rows(codec: &TwoHotCodec, values: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((values.len(), codec.num_bins));
    for (mut row, &v) in out.rows_mut().into_iter().zip(values) {
        codec.encode_into(v, row.as_slice_mut().expect("contiguous row"));
    }
    out
}

fn row_weights(weights: Option<&[Vec<f64>]>, head: usize, cols: usize) -> Option<Array2<f64>> {
    weights.map(|w| {
        let w = &w[head];
        Array2::from_shape_fn((w.len(), cols), |(r, _)| w[r])
    })
}

/// `acc + c · term`, starting a new sum when `acc` is empty.
fn accumulate(mt: &mut ModelTape<'_>, acc: Option<Var>, term: Var, c: f64) -> Option<Var> {
    let scaled = mt.tape.scale(term, c);
    Some(match acc {
        Some(a) => mt.tape.add(a, scaled),
        None => scaled,
    })
}

/// Builds the weighted loss terms; unweighted values are written to `raw`.
///
/// Consistency and reward follow every dynamics head from the first encoded
/// latent along the stored actions. Value heads regress the encoded latents
/// onto the supplied targets. The policy is distilled from the stored expert
/// Gaussians at detached encoder latents.
pub fn build_losses(
    mt: &mut ModelTape<'_>,
    inputs: &LossInputs<'_>,
    w: &LossWeights,
    raw: &mut RawTerms,
) -> Vec<(&'static str, Var)> {
    let batch = inputs.batch;
    let h = batch.horizon();
    let cfg = mt.config().clone();
    let (nf, nv, dz, da) = (cfg.dynamics_heads, cfg.value_heads, cfg.latent_dim, cfg.action_dim);

    let z_enc: Vec<Var> = batch
        .obs
        .iter()
        .map(|o| {
            let x = mt.constant(o.clone());
            mt.encode(x)
        })
        .collect();
    let acts: Vec<Var> = batch.actions.iter().map(|a| mt.constant(a.clone())).collect();
    let reward_targets: Vec<Array2<f64>> = batch.rewards.iter().map(|r| two_hot_rows(inputs.codec, r)).collect();
    let next_targets: Vec<Var> = z_enc[1..]
        .iter()
        .map(|&z| {
            if w.consistency_stop_grad {
                let v = mt.tape.value(z).clone();
                mt.constant(v)
            } else {
                z
            }
        })
        .collect();

    let depth_w: Vec<f64> = (0..h).map(|u| w.rho.powi(u as i32)).collect();
    let mut consistency = None;
    let mut reward = None;
    for i in 0..nf {
        let wz = row_weights(inputs.head_row_weights, i, dz);
        let wr = row_weights(inputs.head_row_weights, i, 1);
        let mut z = z_enc[0];
        for u in 0..h {
            let logits = mt.reward_logits(z, acts[u]);
            let mut xent = mt.tape.softmax_xent(logits, reward_targets[u].clone());
            if let Some(wr) = &wr {
                let c = mt.constant(wr.clone());
                xent = mt.tape.mul(xent, c);
            }
            let xent = mt.tape.mean_all(xent);
            reward = accumulate(mt, reward, xent, depth_w[u] / (h * nf) as f64);

            z = mt.dynamics(i, z, acts[u]);
            let diff = mt.tape.sub(z, next_targets[u]);
            let mut sq = mt.tape.square(diff);
            if let Some(wz) = &wz {
                let c = mt.constant(wz.clone());
                sq = mt.tape.mul(sq, c);
            }
            let mse = mt.tape.mean_all(sq);
            consistency = accumulate(mt, consistency, mse, depth_w[u] / (h * nf) as f64);
        }
    }

    let mut value = None;
    for u in 0..h {
        let target = two_hot_rows(inputs.codec, &inputs.value_targets[u]);
        for j in 0..nv {
            let logits = mt.value_logits(j, z_enc[u]);
            let xent = mt.tape.softmax_xent(logits, target.clone());
            let xent = mt.tape.mean_all(xent);
            value = accumulate(mt, value, xent, depth_w[u] / (h * nv) as f64);
        }
    }

    let mut kl_sum = None;
    let mut ent_sum = None;
    for u in 0..h {
        let zd = {
            let v = mt.tape.value(z_enc[u]).clone();
            mt.constant(v)
        };
        let (mean, log_std) = mt.policy(zd);
        let m_t = batch.target_mean[u].mapv(|m| m.clamp(-TARGET_MEAN_LIMIT, TARGET_MEAN_LIMIT).atanh());
        let s_t = batch.target_std[u].mapv(|s| s.max(MIN_TARGET_STD));
        let m_t = mt.constant(m_t);
        let d = mt.tape.sub(mean, m_t);
        let d2 = mt.tape.square(d);
        let s2 = mt.constant(s_t.mapv(|s| s * s));
        let num = mt.tape.add(d2, s2);
        let neg2 = mt.tape.scale(log_std, -2.0);
        let inv_var = mt.tape.exp(neg2);
        let q = mt.tape.mul(num, inv_var);
        let q = mt.tape.scale(q, 0.5);
        let kl = mt.tape.add(log_std, q);
        let offset = mt.constant(s_t.mapv(|s| -s.ln() - 0.5));
        let kl = mt.tape.add(kl, offset);
        let kl = mt.tape.sum_cols(kl);
        let kl = mt.tape.mean_all(kl);
        kl_sum = accumulate(mt, kl_sum, kl, depth_w[u] / h as f64);

        let ent = mt.tape.sum_cols(log_std);
        let ent = mt.tape.mean_all(ent);
        ent_sum = accumulate(mt, ent_sum, ent, depth_w[u] / h as f64);
    }
    let weight_total: f64 = depth_w.iter().sum::<f64>() / h as f64;

    let consistency = consistency.expect("horizon >= 1");
    let reward = reward.expect("horizon >= 1");
    let value = value.expect("horizon >= 1");
    let kl = kl_sum.expect("horizon >= 1");
    let ent_logstd = ent_sum.expect("horizon >= 1");

    raw.consistency = mt.tape.scalar(consistency);
    raw.reward = mt.tape.scalar(reward);
    raw.value = mt.tape.scalar(value);
    raw.policy_kl = mt.tape.scalar(kl);
    raw.policy_entropy = (mt.tape.scalar(ent_logstd) + weight_total * da as f64 * (0.5 + LOG_SQRT_2PI)) / weight_total;

    let consistency = mt.tape.scale(consistency, w.consistency);
    let reward = mt.tape.scale(reward, w.reward);
    let value = mt.tape.scale(value, w.value);
    let kl = mt.tape.scale(kl, w.policy);
    // The constant part of the entropy carries no gradient and is left out of the objective.
    let ent = mt.tape.scale(ent_logstd, -w.entropy);
    vec![
        ("consistency", consistency),
        ("reward", reward),
        ("value", value),
        ("policy_kl", kl),
        ("policy_entropy", ent),
    ]
}
