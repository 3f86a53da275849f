//! Torque-limited pendulum; angle zero is upright.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// Angular acceleration from gravity at horizontal, `3g / 2l`.
    pub gravity_gain: f64,
    /// Angular acceleration per unit action.
    pub torque_gain: f64,
    pub max_speed: f64,
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity_gain: 15.0,
            torque_gain: 18.0,
            max_speed: 8.0,
            dt: 0.05,
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl PendulumParams {
    /// State `(θ, θ̇)`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)]
    }

    /// Semi-implicit Euler: velocity first, then angle with the new velocity.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let u = a[0].clamp(-1.0, 1.0);
        let acc = self.gravity_gain * s[0].sin() + self.torque_gain * u;
        let vel = (s[1] + acc * self.dt).clamp(-self.max_speed, self.max_speed);
        vec![wrap_angle(s[0] + vel * self.dt), vel]
    }

    pub fn reward(&self, s: &[f64]) -> f64 {
        1.0 - wrap_angle(s[0]).abs() / PI
    }

    pub fn observe(&self, s: &[f64]) -> Vec<f64> {
        vec![s[0].cos(), s[0].sin(), s[1]]
    }
}
