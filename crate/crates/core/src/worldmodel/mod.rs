//! Learned latent world model: encoder, dynamics ensemble, reward head,
//! value-head ensemble with EMA targets, and the policy prior.
//!
//! Heads are indexed from zero. Every predictor is a pure function of its
//! inputs and the parameter snapshot; training produces new parameters via
//! [`gradient`] and an optimizer, never by mutating during inference.

pub mod checkpoint;
pub mod mlp;
pub mod policy;
pub mod simnorm;
pub mod twohot;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::tape::{ParamGrads, Tape, Var};
pub use mlp::Mlp;
pub use policy::PolicyDistribution;
pub use twohot::TwoHotCodec;

/// SimNorm-structured latent state.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent(Vec<f64>);

impl Latent {
    /// Wraps `values`, checking the per-group simplex invariant.
    pub fn new(values: Vec<f64>, group: usize) -> Result<Self> {
        if !simnorm::is_simplex_latent(&values, group, 1e-6) {
            return Err(Error::Config(format!(
                "latent of length {} violates the SimNorm invariant for group size {group}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    /// Wraps raw values without validation; for stub models whose latent is a physical state.
    pub fn raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Action vector with every component clamped to `[-1, 1]` at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Action(Vec<f64>);

impl Action {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for Action {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}

impl From<Action> for Vec<f64> {
    fn from(a: Action) -> Self {
        a.0
    }
}

/// How ensemble members see training data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleData {
    /// Every dynamics head trains on the same batch.
    #[default]
    Shared,
    /// Each head trains on its own with-replacement resample of the batch rows.
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub encoder_dim: usize,
    /// Hidden layers in each head (the encoder always has one).
    pub mlp_layers: usize,
    pub simnorm_dim: usize,
    pub dynamics_heads: usize,
    pub value_heads: usize,
    pub codec: TwoHotCodec,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub ensemble_data: EnsembleData,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_dim: 3,
            action_dim: 1,
            latent_dim: 64,
            hidden_dim: 128,
            encoder_dim: 128,
            mlp_layers: 2,
            simnorm_dim: 8,
            dynamics_heads: 4,
            value_heads: 2,
            codec: TwoHotCodec::default(),
            log_std_min: -3.0,
            log_std_max: 1.0,
            ensemble_data: EnsembleData::Shared,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dynamics_heads == 0 {
            return bad("dynamics_heads must be at least 1");
        }
        if self.value_heads == 0 {
            return bad("value_heads must be at least 1");
        }
        if self.simnorm_dim == 0 || self.latent_dim % self.simnorm_dim != 0 {
            return bad("latent_dim must be a positive multiple of simnorm_dim");
        }
        if self.obs_dim == 0 || self.action_dim == 0 || self.hidden_dim == 0 || self.encoder_dim == 0 {
            return bad("all widths must be positive");
        }
        if self.codec.num_bins < 2 || self.codec.v_max <= self.codec.v_min {
            return bad("two-hot grid needs at least two bins over a non-empty range");
        }
        if self.log_std_min > self.log_std_max {
            return bad("log_std_min exceeds log_std_max");
        }
        Ok(())
    }

    fn head_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.hidden_dim, self.mlp_layers));
        sizes.push(output);
        sizes
    }
}

/// All trainable networks, in parameter-id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub encoder: Mlp,
    pub dynamics: Vec<Mlp>,
    pub reward: Mlp,
    pub values: Vec<Mlp>,
    pub policy: Mlp,
}

/// First parameter id of every network inside a [`Networks`].
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub encoder: usize,
    pub dynamics: Vec<usize>,
    pub reward: usize,
    pub values: Vec<usize>,
    pub policy: usize,
    pub total: usize,
}

impl Networks {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let za = config.latent_dim + config.action_dim;
        let encoder = Mlp::init(&[config.obs_dim, config.encoder_dim, config.latent_dim], &mut rng);
        let dynamics = (0..config.dynamics_heads)
            .map(|_| Mlp::init(&config.head_sizes(za, config.latent_dim), &mut rng))
            .collect();
        let reward = Mlp::init(&config.head_sizes(za, config.codec.num_bins), &mut rng);
        let values = (0..config.value_heads)
            .map(|_| Mlp::init(&config.head_sizes(config.latent_dim, config.codec.num_bins), &mut rng))
            .collect();
        let policy = Mlp::init(&config.head_sizes(config.latent_dim, 2 * config.action_dim), &mut rng);
        Self {
            encoder,
            dynamics,
            reward,
            values,
            policy,
        }
    }

    pub fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.encoder)
            .chain(self.dynamics.iter())
            .chain(std::iter::once(&self.reward))
            .chain(self.values.iter())
            .chain(std::iter::once(&self.policy))
    }

    pub fn mlps_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        std::iter::once(&mut self.encoder)
            .chain(self.dynamics.iter_mut())
            .chain(std::iter::once(&mut self.reward))
            .chain(self.values.iter_mut())
            .chain(std::iter::once(&mut self.policy))
    }

    pub fn layout(&self) -> ParamLayout {
        let mut next = 0;
        let mut take = |m: &Mlp| {
            let id = next;
            next += m.num_arrays();
            id
        };
        let encoder = take(&self.encoder);
        let dynamics = self.dynamics.iter().map(&mut take).collect();
        let reward = take(&self.reward);
        let values = self.values.iter().map(&mut take).collect();
        let policy = take(&self.policy);
        ParamLayout {
            encoder,
            dynamics,
            reward,
            values,
            policy,
            total: next,
        }
    }

    /// Parameter arrays in id order.
    pub fn arrays(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.mlps().flat_map(Mlp::arrays)
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.mlps_mut().flat_map(Mlp::arrays_mut)
    }

    pub fn num_scalars(&self) -> usize {
        self.mlps().map(Mlp::num_scalars).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            dynamics: self.dynamics.iter().map(Mlp::zeros_like).collect(),
            reward: self.reward.zeros_like(),
            values: self.values.iter().map(Mlp::zeros_like).collect(),
            policy: self.policy.zeros_like(),
        }
    }

    /// Collects tape gradients into a structure shaped like `self` (untouched ids are zero).
    pub fn grads_from(&self, mut grads: ParamGrads) -> Self {
        let mut out = self.zeros_like();
        for (id, slot) in out.arrays_mut().enumerate() {
            if let Some(g) = grads.take(id) {
                *slot = g;
            }
        }
        out
    }

    /// Euclidean norm over every scalar.
    pub fn global_norm(&self) -> f64 {
        self.arrays()
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.arrays_mut() {
            a.mapv_inplace(|v| v * c);
        }
    }

    /// Number of parameter arrays belonging to the encoder (ids `0..n`).
    pub fn encoder_arrays(&self) -> usize {
        self.encoder.num_arrays()
    }
}

/// Batched access to the pieces of a world model the return estimators need.
///
/// Rows of `z` and `a` are independent samples. Implemented by the learned
/// [`WorldModel`] and by simulator-backed stand-ins in [`crate::envs`].
pub trait LatentModel: Sync {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn num_dynamics(&self) -> usize;
    fn num_values(&self) -> usize;
    fn next_latents(&self, head: usize, z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64>;
    fn rewards(&self, z: &Array2<f64>, a: &Array2<f64>) -> Vec<f64>;
    fn values(&self, head: usize, z: &Array2<f64>, target: bool) -> Vec<f64>;
    /// Pre-squash Gaussian `(mean, log_std)` of the policy prior, if the model has one.
    fn policy(&self, z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub config: ModelConfig,
    pub nets: Networks,
    pub target_values: Vec<Mlp>,
}

impl WorldModel {
    /// Fresh model with independently initialised heads; targets start equal to the online values.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nets = Networks::init(&config, seed);
        let target_values = nets.values.clone();
        Ok(Self {
            config,
            nets,
            target_values,
        })
    }

    /// `target ← (1 − τ)·target + τ·online`, per parameter.
    pub fn ema_update(&mut self, tau: f64) {
        for (target, online) in self.target_values.iter_mut().zip(&self.nets.values) {
            for (t, o) in target.arrays_mut().zip(online.arrays()) {
                ndarray::Zip::from(t)
                    .and(o)
                    .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
            }
        }
    }

    pub fn encode_batch(&self, obs: &Array2<f64>) -> Array2<f64> {
        let mut z = self.nets.encoder.forward(obs);
        simnorm_rows(&mut z, self.config.simnorm_dim);
        z
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Latent> {
        check_dim("encode observation", self.config.obs_dim, obs.len())?;
        let x = row(obs);
        let z = self.encode_batch(&x);
        let values = z.row(0).to_vec();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(Latent(values))
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        check_dim("latent", self.config.latent_dim, z.dim())
    }

    fn check_action(&self, a: &Action) -> Result<()> {
        check_dim("action", self.config.action_dim, a.dim())
    }

    pub fn dynamics_step(&self, z: &Latent, a: &Action, head: usize) -> Result<Latent> {
        self.check_head("dynamics", head, self.config.dynamics_heads)?;
        self.check_latent(z)?;
        self.check_action(a)?;
        let next = self.next_latents(head, &row(z.values()), &row(a.values()));
        Ok(Latent(next.row(0).to_vec()))
    }

    pub fn predict_reward(&self, z: &Latent, a: &Action) -> Result<f64> {
        self.check_latent(z)?;
        self.check_action(a)?;
        Ok(self.rewards(&row(z.values()), &row(a.values()))[0])
    }

    pub fn predict_value(&self, z: &Latent, head: usize, use_target: bool) -> Result<f64> {
        self.check_head("value", head, self.config.value_heads)?;
        self.check_latent(z)?;
        Ok(self.values(head, &row(z.values()), use_target)[0])
    }

    pub fn policy_prior(&self, z: &Latent) -> Result<PolicyDistribution> {
        self.check_latent(z)?;
        let raw = self.nets.policy.forward(&row(z.values()));
        Ok(PolicyDistribution::from_raw(
            raw.row(0).as_slice().expect("contiguous row"),
            self.config.log_std_min,
            self.config.log_std_max,
        ))
    }

    fn check_head(&self, kind: &'static str, index: usize, count: usize) -> Result<()> {
        if index < count {
            Ok(())
        } else {
            Err(Error::HeadIndex { kind, index, count })
        }
    }

    fn decode_rows(&self, logits: &Array2<f64>) -> Vec<f64> {
        logits
            .rows()
            .into_iter()
            .map(|r| self.config.codec.decode_logits(r.as_slice().expect("contiguous row")))
            .collect()
    }
}

impl LatentModel for WorldModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn num_dynamics(&self) -> usize {
        self.config.dynamics_heads
    }

    fn num_values(&self) -> usize {
        self.config.value_heads
    }

    fn next_latents(&self, head: usize, z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        let za = concat(z, a);
        let mut next = self.nets.dynamics[head].forward(&za);
        simnorm_rows(&mut next, self.config.simnorm_dim);
        next
    }

    fn rewards(&self, z: &Array2<f64>, a: &Array2<f64>) -> Vec<f64> {
        let za = concat(z, a);
        self.decode_rows(&self.nets.reward.forward(&za))
    }

    fn values(&self, head: usize, z: &Array2<f64>, target: bool) -> Vec<f64> {
        let net = if target {
            &self.target_values[head]
        } else {
            &self.nets.values[head]
        };
        self.decode_rows(&net.forward(z))
    }

    fn policy(&self, z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        let raw = self.nets.policy.forward(z);
        let da = self.config.action_dim;
        let mean = raw.slice(ndarray::s![.., ..da]).to_owned();
        let log_std = raw
            .slice(ndarray::s![.., da..])
            .mapv(|v| v.clamp(self.config.log_std_min, self.config.log_std_max));
        Some((mean, log_std))
    }
}

pub(crate) fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

pub(crate) fn concat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts differ")
}

pub(crate) fn simnorm_rows(x: &mut Array2<f64>, group: usize) {
    for mut r in x.rows_mut() {
        simnorm::simnorm_in_place(r.as_slice_mut().expect("contiguous row"), group);
    }
}

/// A [`Tape`] bound to a parameter snapshot, exposing each network as a differentiable op.
pub struct ModelTape<'a> {
    pub tape: Tape,
    nets: &'a Networks,
    config: &'a ModelConfig,
    layout: ParamLayout,
}

impl<'a> ModelTape<'a> {
    pub fn new(nets: &'a Networks, config: &'a ModelConfig) -> Self {
        Self {
            tape: Tape::new(),
            layout: nets.layout(),
            nets,
            config,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.tape.constant(value)
    }

    /// Raw parameter array `id` as a tape leaf.
    pub fn param(&mut self, id: usize) -> Var {
        let array = self.nets.arrays().nth(id).expect("parameter id out of range");
        self.tape.param(id, array)
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn encode(&mut self, obs: Var) -> Var {
        let h = self.nets.encoder.forward_tape(&mut self.tape, obs, self.layout.encoder);
        self.tape.simnorm(h, self.config.simnorm_dim)
    }

    pub fn dynamics(&mut self, head: usize, z: Var, a: Var) -> Var {
        let za = self.tape.concat_cols(z, a);
        let h = self.nets.dynamics[head].forward_tape(&mut self.tape, za, self.layout.dynamics[head]);
        self.tape.simnorm(h, self.config.simnorm_dim)
    }

    pub fn reward_logits(&mut self, z: Var, a: Var) -> Var {
        let za = self.tape.concat_cols(z, a);
        self.nets.reward.forward_tape(&mut self.tape, za, self.layout.reward)
    }

    pub fn value_logits(&mut self, head: usize, z: Var) -> Var {
        self.nets.values[head].forward_tape(&mut self.tape, z, self.layout.values[head])
    }

    /// Pre-squash policy mean and clamped log-std.
    pub fn policy(&mut self, z: Var) -> (Var, Var) {
        let raw = self.nets.policy.forward_tape(&mut self.tape, z, self.layout.policy);
        let da = self.config.action_dim;
        let mean = self.tape.slice_cols(raw, 0, da);
        let log_std = self.tape.slice_cols(raw, da, 2 * da);
        let log_std = self
            .tape
            .clamp(log_std, self.config.log_std_min, self.config.log_std_max);
        (mean, log_std)
    }
}

/// Result of [`gradient`]: the total loss, each named term, and its parameter gradient.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub terms: Vec<(&'static str, f64)>,
    pub grads: Networks,
}

/// Evaluates the named scalar loss terms built by `build` and returns their sum.
pub fn evaluate_loss<F>(nets: &Networks, config: &ModelConfig, build: F) -> Result<(f64, Vec<(&'static str, f64)>)>
where
    F: FnOnce(&mut ModelTape<'_>) -> Vec<(&'static str, Var)>,
{
    let mut mt = ModelTape::new(nets, config);
    let terms = build(&mut mt);
    let values: Vec<_> = terms.iter().map(|&(n, v)| (n, mt.tape.scalar(v))).collect();
    check_terms(&values)?;
    Ok((values.iter().map(|t| t.1).sum(), values))
}

fn check_terms(values: &[(&'static str, f64)]) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(Error::NonFinite(format!("loss term `{name}` = {v}"))),
        None => Ok(()),
    }
}

/// Analytic gradient of the sum of the named loss terms built by `build`.
///
/// Fails without touching anything if any term is non-finite, naming the term.
pub fn gradient<F>(nets: &Networks, config: &ModelConfig, build: F) -> Result<Gradient>
where
    F: FnOnce(&mut ModelTape<'_>) -> Vec<(&'static str, Var)>,
{
    let mut mt = ModelTape::new(nets, config);
    let terms = build(&mut mt);
    let values: Vec<_> = terms.iter().map(|&(n, v)| (n, mt.tape.scalar(v))).collect();
    check_terms(&values)?;
    let loss = values.iter().map(|t| t.1).sum();
    let total = match terms.split_first() {
        None => {
            return Ok(Gradient {
                loss: 0.0,
                terms: values,
                grads: nets.zeros_like(),
            })
        }
        Some((first, rest)) => rest.iter().fold(first.1, |acc, &(_, v)| mt.tape.add(acc, v)),
    };
    let grads = nets.grads_from(mt.tape.backward(total));
    Ok(Gradient {
        loss,
        terms: values,
        grads,
    })
}

/// Draws a random sample of parameter coordinates `(array id, flat index)`.
pub fn random_coordinates<R: Rng + ?Sized>(nets: &Networks, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = nets.arrays().map(|a| a.len()).collect();
    let total: usize = sizes.iter().sum();
    (0..count)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            for (id, &n) in sizes.iter().enumerate() {
                if k < n {
                    return (id, k);
                }
                k -= n;
            }
            unreachable!()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            obs_dim: 3,
            action_dim: 2,
            latent_dim: 16,
            hidden_dim: 24,
            encoder_dim: 24,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn encode_is_deterministic_simplex_and_finite() {
        let m = WorldModel::new(small_config(), 3).unwrap();
        let obs = [0.3, -1.0, 2.5];
        let a = m.encode(&obs).unwrap();
        let b = m.encode(&obs).unwrap();
        assert_eq!(a, b);
        assert!(simnorm::is_simplex_latent(a.values(), 8, 1e-6));
        assert!(a.values().iter().all(|v| v.is_finite()));
        assert!(matches!(m.encode(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dynamics_heads_are_distinct_and_valid() {
        let m = WorldModel::new(small_config(), 3).unwrap();
        let z = m.encode(&[0.1, 0.2, 0.3]).unwrap();
        let a = Action::new(vec![0.5, -2.0]);
        assert_eq!(a.values(), &[0.5, -1.0]);
        let n0 = m.dynamics_step(&z, &a, 0).unwrap();
        let n0b = m.dynamics_step(&z, &a, 0).unwrap();
        let n1 = m.dynamics_step(&z, &a, 1).unwrap();
        assert_eq!(n0, n0b);
        assert_ne!(n0, n1);
        assert!(simnorm::is_simplex_latent(n1.values(), 8, 1e-6));
        assert!(matches!(
            m.dynamics_step(&z, &a, 4),
            Err(Error::HeadIndex { index: 4, count: 4, .. })
        ));
    }

    #[test]
    fn reward_and_value_are_bounded() {
        let m = WorldModel::new(small_config(), 5).unwrap();
        let z = m.encode(&[3.0, -2.0, 0.0]).unwrap();
        let a = Action::new(vec![0.1, 0.2]);
        let r = m.predict_reward(&z, &a).unwrap();
        assert!((-10.0..=10.0).contains(&r));
        let v0 = m.predict_value(&z, 0, false).unwrap();
        let v0t = m.predict_value(&z, 0, true).unwrap();
        let v1 = m.predict_value(&z, 1, false).unwrap();
        assert_eq!(v0, v0t);
        assert_ne!(v0, v1);
        assert!((-10.0..=10.0).contains(&v1));
        assert!(m.predict_value(&z, 2, false).is_err());
    }

    #[test]
    fn ema_rule_is_exact() {
        let mut m = WorldModel::new(small_config(), 5).unwrap();
        let before = m.target_values.clone();
        for a in m.nets.values[0].arrays_mut() {
            a.mapv_inplace(|v| v + 1.0);
        }
        m.ema_update(0.01);
        for ((t, old), online) in m.target_values[0]
            .arrays()
            .zip(before[0].arrays())
            .zip(m.nets.values[0].arrays())
        {
            for ((&t, &o), &n) in t.iter().zip(old.iter()).zip(online.iter()) {
                assert_eq!(t, 0.99 * o + 0.01 * n);
            }
        }
        for (t, o) in m.target_values[1].arrays().zip(m.nets.values[1].arrays()) {
            for (&t, &o) in t.iter().zip(o.iter()) {
                assert!((t - o).abs() <= 1e-15 * o.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let cfg = small_config();
        let nets = Networks::init(&cfg, 1);
        let g = gradient(&nets, &cfg, |mt| {
            let c = mt.constant(Array2::from_elem((1, 1), 4.0));
            vec![("constant", c)]
        })
        .unwrap();
        assert_eq!(g.loss, 4.0);
        assert_eq!(g.grads.global_norm(), 0.0);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let cfg = small_config();
        let nets = Networks::init(&cfg, 1);
        let g = gradient(&nets, &cfg, |mt| {
            (0..mt.num_params())
                .map(|id| {
                    let p = mt.param(id);
                    let n = mt.tape.value(p).len() as f64;
                    let sq = mt.tape.square(p);
                    let mean = mt.tape.mean_all(sq);
                    ("norm", mt.tape.scale(mean, 0.5 * n))
                })
                .collect()
        })
        .unwrap();
        for (ga, pa) in g.grads.arrays().zip(nets.arrays()) {
            for (x, y) in ga.iter().zip(pa.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_finite_term_is_named() {
        let cfg = small_config();
        let nets = Networks::init(&cfg, 1);
        let err = gradient(&nets, &cfg, |mt| {
            let ok = mt.constant(Array2::from_elem((1, 1), 1.0));
            let bad = mt.constant(Array2::from_elem((1, 1), f64::NAN));
            vec![("fine", ok), ("reward", bad)]
        })
        .unwrap_err();
        assert!(err.to_string().contains("reward"), "{err}");
    }

    #[test]
    fn tape_model_matches_direct_inference() {
        let cfg = small_config();
        let m = WorldModel::new(cfg.clone(), 9).unwrap();
        let obs = Array2::from_shape_fn((3, 3), |(r, c)| (r * 3 + c) as f64 * 0.1 - 0.4);
        let a = Array2::from_shape_fn((3, 2), |(r, c)| (r as f64 - c as f64) * 0.3);
        let z_direct = m.encode_batch(&obs);
        let next_direct = m.next_latents(2, &z_direct, &a);
        let mut mt = ModelTape::new(&m.nets, &m.config);
        let o = mt.constant(obs);
        let av = mt.constant(a);
        let z = mt.encode(o);
        let next = mt.dynamics(2, z, av);
        let d1 = (&z_direct - mt.tape.value(z)).mapv(f64::abs).sum();
        let d2 = (&next_direct - mt.tape.value(next)).mapv(f64::abs).sum();
        assert!(d1 < 1e-13 && d2 < 1e-13);
    }
}
