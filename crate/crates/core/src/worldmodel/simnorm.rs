//! Simplicial normalization: softmax within contiguous groups of `G` entries.

use crate::error::{Error, Result};

/// Applies SimNorm to `x`, returning a new vector whose groups each lie on the simplex.
pub fn simnorm(x: &[f64], group: usize) -> Result<Vec<f64>> {
    if group == 0 || x.len() % group != 0 {
        return Err(Error::Dimension {
            context: "simnorm (length must be a multiple of the group size)",
            expected: group.max(1) * (x.len() / group.max(1) + 1),
            got: x.len(),
        });
    }
    let mut out = x.to_vec();
    simnorm_in_place(&mut out, group);
    Ok(out)
}

pub(crate) fn simnorm_in_place(x: &mut [f64], group: usize) {
    for chunk in x.chunks_mut(group) {
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in chunk.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in chunk.iter_mut() {
            *v /= sum;
        }
    }
}

/// True when every group of `z` sums to one within `tol` and all entries lie in `[0, 1]`.
pub fn is_simplex_latent(z: &[f64], group: usize, tol: f64) -> bool {
    group > 0
        && z.len() % group == 0
        && z.iter().all(|&v| (0.0..=1.0).contains(&v))
        && z.chunks(group).all(|c| (c.iter().sum::<f64>() - 1.0).abs() <= tol)
}
