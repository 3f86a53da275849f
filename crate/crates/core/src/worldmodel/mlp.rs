//! Dense feed-forward stacks with ELU hidden activations and a linear output.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{elu, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub w: Array2<f64>,
    /// `1 × out`
    pub b: Array2<f64>,
}

impl Linear {
    /// Uniform fan-in initialisation, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        Self {
            w,
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Builds a stack with layer widths `sizes[0] -> sizes[1] -> ... -> sizes[n]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let layers = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    /// Number of parameter arrays (weights and biases) in this stack.
    pub fn num_arrays(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Row-batched forward pass without gradient tracking.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.dot(&self.layers[0].w);
        h += &self.layers[0].b;
        if last > 0 {
            h.mapv_inplace(elu);
        }
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            h = h.dot(&layer.w);
            h += &layer.b;
            if k < last {
                h.mapv_inplace(elu);
            }
        }
        h
    }

    /// Forward pass recorded on `tape`; parameter ids are `first_id..first_id + num_arrays()`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, first_id: usize) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let w = tape.param(first_id + 2 * k, &layer.w);
            let b = tape.param(first_id + 2 * k + 1, &layer.b);
            h = tape.matmul(h, w);
            h = tape.add_row(h, b);
            if k < last {
                h = tape.elu(h);
            }
        }
        h
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b])
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array2::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }
}
