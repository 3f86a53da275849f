//! Adam with per-array learning rates.

use crate::worldmodel::Networks;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Adam {
    t: u64,
    m: Networks,
    v: Networks,
}

impl Adam {
    pub fn new(like: &Networks) -> Self {
        Self {
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected step; `lr(id)` gives the rate of parameter array `id`.
    pub fn step(&mut self, params: &mut Networks, grads: &Networks, lr: impl Fn(usize) -> f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (id, (((p, g), m), v)) in params
            .arrays_mut()
            .zip(grads.arrays())
            .zip(self.m.arrays_mut())
            .zip(self.v.arrays_mut())
            .enumerate()
        {
            let rate = lr(id);
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= rate * (*m / c1) / ((*v / c2).sqrt() + EPS);
            });
        }
    }
}
