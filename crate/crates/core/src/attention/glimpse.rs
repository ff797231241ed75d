use super::{AttentionWeights, Memory};
use crate::error::{Error, Result};
use crate::numcore::{Float, Graph, Tensor, Var};

/// Attention-weighted sum of value rows, batched: `[B, S] -> [B, d_v]`.
pub(crate) fn glimpse_var<F: Float>(g: &mut Graph<F>, mem: &Memory, alpha: Var) -> Result<Var> {
    let a = g.reshape(alpha, &[mem.batch, 1, mem.max_len])?;
    let out = g.bmm(a, mem.states)?;
    g.reshape(out, &[mem.batch, mem.dim])
}

/// `g = sum_s alpha_s v_s` for an `n_s x d_v` value matrix.
pub fn glimpse(values: &Tensor<f64>, alpha: &AttentionWeights) -> Result<Vec<f64>> {
    let shape = values.shape();
    if shape.len() != 2 || shape[0] != alpha.len() {
        return Err(Error::ShapeMismatch {
            op: "glimpse",
            lhs: shape.to_vec(),
            rhs: vec![alpha.len()],
        });
    }
    let mut g = Graph::<f64>::new();
    let states = g.constant(values.reshape(&[1, shape[0], shape[1]])?);
    let mem = Memory::new(&mut g, states, &[shape[0]])?;
    let a = g.constant(Tensor::new(&[1, alpha.len()], alpha.as_slice().to_vec())?);
    let out = glimpse_var(&mut g, &mem, a)?;
    Ok(g.value(out).data().to_vec())
}
