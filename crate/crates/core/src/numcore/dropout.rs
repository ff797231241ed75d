use rand::Rng;

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`. Outside training the mask is all ones.
pub fn dropout_mask<F: Float, R: Rng>(
    shape: &[usize],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(Tensor::ones(shape));
    }
    let keep = F::from_f64(1.0 / (1.0 - rate));
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| if rng.gen_bool(rate) { F::zero() } else { keep })
        .collect();
    Tensor::new(shape, data)
}
