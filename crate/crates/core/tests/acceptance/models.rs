//! Analytic latent models with known optima.

use etdmpc::worldmodel::LatentModel;
use ndarray::Array2;

/// One-step reward `-(a - target)^2`, zero value, single head.
pub struct Quadratic {
    pub target: f64,
}

impl LatentModel for Quadratic {
    fn latent_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn num_dynamics(&self) -> usize {
        1
    }
    fn num_values(&self) -> usize {
        1
    }
    fn next_latents(&self, _head: usize, z: &Array2<f64>, _a: &Array2<f64>) -> Array2<f64> {
        z.clone()
    }
    fn rewards(&self, _z: &Array2<f64>, a: &Array2<f64>) -> Vec<f64> {
        a.column(0).iter().map(|a| -(a - self.target).powi(2)).collect()
    }
    fn values(&self, _head: usize, z: &Array2<f64>, _target: bool) -> Vec<f64> {
        vec![0.0; z.nrows()]
    }
    fn policy(&self, _z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        None
    }
}

/// Positive first actions reach a high-mean region the heads disagree on;
/// negative ones reach a lower-mean region with unanimous heads.
///
/// The latent after one step is `[a, head]`, and every head's value reads it back.
pub struct SplitRegions {
    pub high_mean: f64,
    pub low_mean: f64,
    /// Head offsets in the disagreeing region, multiplied by `spread`.
    pub offsets: Vec<f64>,
    pub spread: f64,
}

impl SplitRegions {
    pub fn value(&self, a: f64, head: usize) -> f64 {
        if a > 0.0 {
            self.high_mean - (a - 0.5).powi(2) + self.spread * self.offsets[head]
        } else {
            self.low_mean - (a + 0.5).powi(2)
        }
    }
}

impl LatentModel for SplitRegions {
    fn latent_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn num_dynamics(&self) -> usize {
        self.offsets.len()
    }
    fn num_values(&self) -> usize {
        1
    }
    fn next_latents(&self, head: usize, _z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((a.nrows(), 2), |(r, c)| if c == 0 { a[[r, 0]] } else { head as f64 })
    }
    fn rewards(&self, z: &Array2<f64>, _a: &Array2<f64>) -> Vec<f64> {
        vec![0.0; z.nrows()]
    }
    fn values(&self, _head: usize, z: &Array2<f64>, _target: bool) -> Vec<f64> {
        z.rows().into_iter().map(|r| self.value(r[0], r[1] as usize)).collect()
    }
    fn policy(&self, _z: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        None
    }
}
