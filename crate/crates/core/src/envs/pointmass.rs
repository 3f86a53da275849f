//! Planar point mass pushed toward a goal.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointmassParams {
    pub goal: [f64; 2],
    pub force_gain: f64,
    pub damping: f64,
    /// Positions are confined to `[-bound, bound]` per axis.
    pub bound: f64,
    pub dt: f64,
}

impl Default for PointmassParams {
    fn default() -> Self {
        Self {
            goal: [0.0, 0.0],
            force_gain: 2.0,
            damping: 0.5,
            bound: 1.5,
            dt: 0.05,
        }
    }
}

impl PointmassParams {
    /// State `(x, y, vx, vy)`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0, 0.0]
    }

    /// Semi-implicit Euler; hitting a wall zeroes the normal velocity.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = s.to_vec();
        for d in 0..2 {
            let f = self.force_gain * a[d].clamp(-1.0, 1.0) - self.damping * s[2 + d];
            let v = s[2 + d] + f * self.dt;
            let p = s[d] + v * self.dt;
            if p.abs() > self.bound {
                out[d] = p.clamp(-self.bound, self.bound);
                out[2 + d] = 0.0;
            } else {
                out[d] = p;
                out[2 + d] = v;
            }
        }
        out
    }

    pub fn reward(&self, s: &[f64]) -> f64 {
        let dx = s[0] - self.goal[0];
        let dy = s[1] - self.goal[1];
        (-(dx * dx + dy * dy)).exp()
    }

    pub fn observe(&self, s: &[f64]) -> Vec<f64> {
        s.to_vec()
    }
}
