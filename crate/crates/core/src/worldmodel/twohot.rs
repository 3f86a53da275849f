//! Two-hot categorical codec for scalar regression over a uniform bin grid.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoHotCodec {
    pub num_bins: usize,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for TwoHotCodec {
    fn default() -> Self {
        Self {
            num_bins: 101,
            v_min: -10.0,
            v_max: 10.0,
        }
    }
}

impl TwoHotCodec {
    pub fn new(num_bins: usize, v_min: f64, v_max: f64) -> Self {
        assert!(num_bins >= 2 && v_max > v_min, "degenerate two-hot grid");
        Self { num_bins, v_min, v_max }
    }

    pub fn bin_width(&self) -> f64 {
        (self.v_max - self.v_min) / (self.num_bins - 1) as f64
    }

    pub fn bin_value(&self, k: usize) -> f64 {
        self.v_min + k as f64 * self.bin_width()
    }

    /// Lower bin index and the weight carried by the upper neighbour.
    fn locate(&self, v: f64) -> (usize, f64) {
        let v = v.clamp(self.v_min, self.v_max);
        let pos = (v - self.v_min) / self.bin_width();
        let lower = (pos.floor() as usize).min(self.num_bins - 1);
        if lower == self.num_bins - 1 {
            return (lower, 0.0);
        }
        // Snap values within rounding of a bin centre onto it.
        let frac = pos - lower as f64;
        if frac < 1e-12 {
            (lower, 0.0)
        } else if frac > 1.0 - 1e-12 {
            (lower + 1, 0.0)
        } else {
            (lower, frac)
        }
    }

    /// Writes the two-hot encoding of `v` into `out` (length `num_bins`).
    pub fn encode_into(&self, v: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_bins);
        out.iter_mut().for_each(|o| *o = 0.0);
        let (lower, upper_w) = self.locate(v);
        out[lower] = 1.0 - upper_w;
        if upper_w > 0.0 {
            out[lower + 1] = upper_w;
        }
    }

    pub fn encode(&self, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_bins];
        self.encode_into(v, &mut out);
        out
    }

    /// Expected bin value under `p`. Vectors that do not sum to one are renormalised.
    pub fn decode(&self, p: &[f64]) -> f64 {
        debug_assert_eq!(p.len(), self.num_bins);
        let mass: f64 = p.iter().sum();
        debug_assert!(
            (mass - 1.0).abs() < 1e-6,
            "two-hot decode of a non-normalised vector (mass {mass})"
        );
        let width = self.bin_width();
        let weighted: f64 = p
            .iter()
            .enumerate()
            .map(|(k, &pk)| pk * (self.v_min + k as f64 * width))
            .sum();
        weighted / mass
    }

    /// Decodes raw logits through a softmax.
    pub fn decode_logits(&self, logits: &[f64]) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = self.bin_width();
        let mut z = 0.0;
        let mut acc = 0.0;
        for (k, &l) in logits.iter().enumerate() {
            let e = (l - max).exp();
            z += e;
            acc += e * (self.v_min + k as f64 * width);
        }
        acc / z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_lands_on_centre_bin() {
        let c = TwoHotCodec::default();
        let p = c.encode(0.0);
        assert_eq!(p[50], 1.0);
        assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn tenth_splits_evenly() {
        let c = TwoHotCodec::default();
        let p = c.encode(0.1);
        assert!((p[50] - 0.5).abs() < 1e-12);
        assert!((p[51] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundaries_are_exact() {
        let c = TwoHotCodec::default();
        assert_eq!(c.encode(-10.0)[0], 1.0);
        assert_eq!(c.encode(10.0)[100], 1.0);
        assert_eq!(c.decode(&c.encode(-10.0)), -10.0);
        assert_eq!(c.decode(&c.encode(10.0)), 10.0);
        assert_eq!(c.encode(-1e9)[0], 1.0);
    }

    proptest! {
        #[test]
        fn roundtrip(v in -10.0f64..=10.0) {
            let c = TwoHotCodec::default();
            let p = c.encode(v);
            prop_assert!(p.iter().filter(|&&x| x != 0.0).count() <= 2);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((c.decode(&p) - v).abs() < 1e-6);
        }
    }
}
