use rand::Rng;
use rand_distr::StandardNormal;

use super::Action;

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Tanh-squashed diagonal Gaussian policy over actions in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDistribution {
    /// Pre-squash mean.
    pub mean: Vec<f64>,
    /// Pre-squash log standard deviation, already clamped.
    pub log_std: Vec<f64>,
}

impl PolicyDistribution {
    /// Splits a raw head output `[mean | log_std]` and clamps the log-std.
    pub fn from_raw(raw: &[f64], log_std_min: f64, log_std_max: f64) -> Self {
        let da = raw.len() / 2;
        Self {
            mean: raw[..da].to_vec(),
            log_std: raw[da..].iter().map(|v| v.clamp(log_std_min, log_std_max)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Deterministic action `tanh(mean)`.
    pub fn mode(&self) -> Action {
        Action::new(self.mean.iter().map(|m| m.tanh()).collect())
    }

    /// Reparameterised sample `tanh(mean + exp(log_std) · eps)`; also returns the pre-squash point.
    pub fn sample_with_noise(&self, eps: &[f64]) -> (Action, Vec<f64>) {
        let pre: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, s), e)| m + s.exp() * e)
            .collect();
        (Action::new(pre.iter().map(|u| u.tanh()).collect()), pre)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Action, Vec<f64>) {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(&eps)
    }

    /// Log-density of the squashed action whose pre-squash value is `pre`.
    pub fn log_prob(&self, pre: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(pre)
            .map(|((m, s), u)| {
                let z = (u - m) / s.exp();
                let t = u.tanh();
                -0.5 * z * z - s - LOG_SQRT_2PI - (1.0 - t * t + 1e-6).ln()
            })
            .sum()
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| 0.5 + LOG_SQRT_2PI + s).sum()
    }
}
