//! Model ensembles built from an exact simulator plus smooth per-head bias fields.
//!
//! Latents are raw simulator states, so the ensemble plugs into the planner and
//! the return estimators as a [`LatentModel`] with controllable model error.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EnvSpec;
use crate::worldmodel::LatentModel;

/// Number of sinusoid features per bias-field output.
const FEATURES: usize = 4;

/// A smooth random map `R^in → R^out`: a normalized sum of random sinusoids per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasField {
    in_dim: usize,
    out_dim: usize,
    omega: Vec<f64>,
    phase: Vec<f64>,
    amp: Vec<f64>,
}

impl BiasField {
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let omega = (0..out_dim * FEATURES * in_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let phase = (0..out_dim * FEATURES)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let amp = (0..out_dim * FEATURES)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / (FEATURES as f64).sqrt())
            .collect();
        Self {
            in_dim,
            out_dim,
            omega,
            phase,
            amp,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        for (d, slot) in out.iter_mut().enumerate().take(self.out_dim) {
            let mut acc = 0.0;
            for k in 0..FEATURES {
                let f = d * FEATURES + k;
                let w = &self.omega[f * self.in_dim..(f + 1) * self.in_dim];
                let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.phase[f];
                acc += self.amp[f] * arg.sin();
            }
            *slot = acc;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationScales {
    pub state: f64,
    pub reward: f64,
    pub value: f64,
}

impl PerturbationScales {
    pub fn uniform(scale: f64) -> Self {
        Self {
            state: scale,
            reward: scale,
            value: scale,
        }
    }
}

/// Exact value function the value heads perturb.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseValue {
    #[default]
    Zero,
    /// `scale · r(s, 0)`.
    ScaledReward { scale: f64 },
}

/// Simulator-derived ensemble with per-head dynamics and value bias fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedModelEnsemble {
    pub spec: EnvSpec,
    pub scales: PerturbationScales,
    pub base_value: BaseValue,
    /// Subtract the cross-head mean so the dynamics biases average to zero.
    pub centered: bool,
    /// Dynamics heads whose bias is active; `None` perturbs all heads.
    pub active_heads: Option<Vec<usize>>,
    /// Pre-squash log-std of the zero-mean policy prior; `None` disables the prior.
    pub policy_log_std: Option<f64>,
    state_fields: Vec<BiasField>,
    value_fields: Vec<BiasField>,
    reward_field: BiasField,
}

impl PerturbedModelEnsemble {
    /// Every head perturbed by an independent field drawn from `seed`.
    pub fn new(spec: EnvSpec, scales: PerturbationScales, num_dynamics: usize, num_values: usize, seed: u64) -> Self {
        assert!(num_dynamics >= 1 && num_values >= 1);
        assert!(scales.state >= 0.0 && scales.reward >= 0.0 && scales.value >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = spec.state_dim();
        let xa = sd + spec.action_dim();
        let state_fields = (0..num_dynamics).map(|_| BiasField::random(xa, sd, &mut rng)).collect();
        let value_fields = (0..num_values).map(|_| BiasField::random(sd, 1, &mut rng)).collect();
        let reward_field = BiasField::random(xa, 1, &mut rng);
        Self {
            spec,
            scales,
            base_value: BaseValue::Zero,
            centered: false,
            active_heads: None,
            policy_log_std: None,
            state_fields,
            value_fields,
            reward_field,
        }
    }

    /// Every head exact except dynamics head `corrupted`.
    pub fn with_corrupted_head(
        spec: EnvSpec,
        state_scale: f64,
        corrupted: usize,
        num_dynamics: usize,
        num_values: usize,
        seed: u64,
    ) -> Self {
        assert!(corrupted < num_dynamics);
        let mut m = Self::new(
            spec,
            PerturbationScales {
                state: state_scale,
                ..Default::default()
            },
            num_dynamics,
            num_values,
            seed,
        );
        m.active_heads = Some(vec![corrupted]);
        m
    }

    pub fn centered(mut self) -> Self {
        self.centered = true;
        self
    }

    pub fn with_base_value(mut self, base: BaseValue) -> Self {
        self.base_value = base;
        self
    }

    pub fn with_policy(mut self, log_std: f64) -> Self {
        self.policy_log_std = Some(log_std);
        self
    }

    fn head_active(&self, head: usize) -> bool {
        self.active_heads.as_ref().is_none_or(|h| h.contains(&head))
    }

    /// Additive state bias of dynamics head `head` at `(s, a)`, before scaling.
    pub fn state_bias(&self, head: usize, sa: &[f64]) -> Vec<f64> {
        let sd = self.spec.state_dim();
        let mut b = vec![0.0; sd];
        if self.head_active(head) {
            self.state_fields[head].eval_into(sa, &mut b);
        }
        if self.centered {
            let mut tmp = vec![0.0; sd];
            let mut mean = vec![0.0; sd];
            for h in 0..self.state_fields.len() {
                if self.head_active(h) {
                    self.state_fields[h].eval_into(sa, &mut tmp);
                    mean.iter_mut().zip(&tmp).for_each(|(m, t)| *m += t);
                }
            }
            let n = self.state_fields.len() as f64;
            b.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m / n);
        }
        b
    }

    /// Exact value under [`BaseValue`].
    pub fn base_value_at(&self, s: &[f64]) -> f64 {
        match self.base_value {
            BaseValue::Zero => 0.0,
            BaseValue::ScaledReward { scale } => scale * self.spec.reward(s, &vec![0.0; self.spec.action_dim()]),
        }
    }

    /// Mean of the value heads at simulator state `s`.
    pub fn mean_value(&self, s: &[f64]) -> f64 {
        let z = Array2::from_shape_vec((1, s.len()), s.to_vec()).expect("row");
        let nv = self.value_fields.len();
        (0..nv).map(|j| self.values(j, &z, false)[0]).sum::<f64>() / nv as f64
    }
}

fn concat_row(s: ndarray::ArrayView1<f64>, a: ndarray::ArrayView1<f64>) -> Vec<f64> {
    s.iter().chain(a.iter()).copied().collect()
}

impl LatentModel for PerturbedModelEnsemble {
    fn latent_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.spec.action_dim()
    }

    fn num_dynamics(&self) -> usize {
        self.state_fields.len()
    }

    fn num_values(&self) -> usize {
        self.value_fields.len()
    }

    fn next_latents(&self, head: usize, z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(z.raw_dim());
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let s = z.row(r);
            let act = a.row(r);
            let mut next = self
                .spec
                .step_state(s.as_slice().expect("contiguous"), act.as_slice().expect("contiguous"));
            if self.scales.state > 0.0 {
                let b = self.state_bias(head, &concat_row(s, act));
                next.iter_mut().zip(&b).for_each(|(x, d)| *x += self.scales.state * d);
                self.spec.canonicalize(&mut next);
            }
            row.assign(&ndarray::ArrayView1::from(&next));
        }
        out
    }

    fn rewards(&self, z: &Array2<f64>, a: &Array2<f64>) -> Vec<f64> {
        let mut b = [0.0];
        z.rows()
            .into_iter()
            .zip(a.rows())
            .map(|(s, act)| {
                let s_sl = s.as_slice().expect("contiguous");
                let mut r = self.spec.reward(s_sl, act.as_slice().expect("contiguous"));
                if self.scales.reward > 0.0 {
                    self.reward_field.eval_into(&concat_row(s, act), &mut b);
                    r += self.scales.reward * b[0];
                }
                r
            })
            .collect()
    }

    fn values(&self, head: usize, z: &Array2<f64>, _target: bool) -> Vec<f64> {
        let mut b = [0.0];
        z.rows()
            .into_iter()
            .map(|s| {
                let s = s.as_slice().expect("contiguous");
                let mut v = self.base_value_at(s);
                if self.scales.value > 0.0 {
                    self.value_fields[head].eval_into(s, &mut b);
                    v += self.scales.value * b[0];
                }
                v
            })
            .collect()
    }

    fn policy(&self, z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        self.policy_log_std.map(|ls| {
            let da = self.spec.action_dim();
            (Array2::zeros((z.nrows(), da)), Array2::from_elem((z.nrows(), da), ls))
        })
    }
}
