use crate::error::{Error, Result};
use crate::numcore::{Float, Tensor};

/// Sinusoidal position encoding of dimension `d`: entry `2i` is
/// `sin(p / 10000^(2i/d))`, entry `2i+1` the matching cosine.
///
/// Positions are signed so relative offsets `s - t` can be encoded directly.
pub fn sinusoidal_encoding(position: f64, d: usize) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::invalid(format!("sinusoidal encoding needs an even dimension, got {d}")));
    }
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let angle = position / 10000f64.powf(2.0 * i as f64 / d as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// `[positions.len(), d]` matrix with one encoding per row.
pub(crate) fn encoding_matrix<F: Float>(positions: impl Iterator<Item = f64>, d: usize) -> Result<Tensor<F>> {
    let mut rows = 0;
    let mut data = Vec::new();
    for p in positions {
        data.extend(sinusoidal_encoding(p, d)?.into_iter().map(F::from_f64));
        rows += 1;
    }
    Tensor::new(&[rows, d], data)
}
