use rand::Rng;

use super::AttentionWeights;
use crate::error::{Error, Result};
use crate::numcore::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Query-dependent convex combination of location and content attention:
/// `alpha = p * lambda + (1 - p) * gamma` with `p = sigmoid(W q + b)`.
#[derive(Debug, Clone, Copy)]
pub struct MixGate {
    pub query_dim: usize,
    w: ParamId,
    b: ParamId,
}

impl MixGate {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        query_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(MixGate {
            query_dim,
            w: store.insert_matrix(format!("{prefix}.w"), query_dim, 1, rng)?,
            b: store.insert_bias(format!("{prefix}.b"), 1)?,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    /// Location share `[B, 1]` for queries `[B, d]`.
    pub(crate) fn percent<F: Float>(&self, g: &mut Graph<F>, store: &ParamStore<F>, query: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let pre = g.matmul(query, w)?;
        let pre = g.add(pre, b)?;
        Ok(g.sigmoid(pre))
    }

    /// Mixes `[B, S]` attentions with a `[B, 1]` location share.
    pub(crate) fn mix_vars<F: Float>(g: &mut Graph<F>, gamma: Var, lambda: Var, percent: Var) -> Result<Var> {
        if g.shape(gamma) != g.shape(lambda) {
            return Err(Error::ShapeMismatch {
                op: "mix_attend",
                lhs: g.shape(gamma).to_vec(),
                rhs: g.shape(lambda).to_vec(),
            });
        }
        let loc = g.mul(percent, lambda)?;
        let rest = g.one_minus(percent);
        let content = g.mul(rest, gamma)?;
        g.add(loc, content)
    }

    /// Single-step mix; returns the mixed attention and the location share.
    pub fn mix<F: Float>(
        &self,
        store: &ParamStore<F>,
        gamma: &AttentionWeights,
        lambda: &AttentionWeights,
        query: &[F],
    ) -> Result<(AttentionWeights, f64)> {
        if query.len() != self.query_dim {
            return Err(Error::ShapeMismatch {
                op: "mix_attend",
                lhs: vec![query.len()],
                rhs: vec![self.query_dim],
            });
        }
        let mut g = Graph::<F>::new();
        let q = g.constant(Tensor::new(&[1, self.query_dim], query.to_vec())?);
        let p = self.percent(&mut g, store, q)?;
        let percent = g.value(p).data()[0].as_f64();
        Ok((mix_with_percent(gamma, lambda, percent)?, percent))
    }
}

/// `p * lambda + (1 - p) * gamma` for a given location share `p`.
pub fn mix_with_percent(gamma: &AttentionWeights, lambda: &AttentionWeights, percent: f64) -> Result<AttentionWeights> {
    if gamma.len() != lambda.len() {
        return Err(Error::ShapeMismatch {
            op: "mix_attend",
            lhs: vec![gamma.len()],
            rhs: vec![lambda.len()],
        });
    }
    if !(0.0..=1.0).contains(&percent) {
        return Err(Error::invalid(format!("mixing weight {percent} outside [0, 1]")));
    }
    let mut g = Graph::<f64>::new();
    let gv = g.constant(Tensor::new(&[1, gamma.len()], gamma.as_slice().to_vec())?);
    let lv = g.constant(Tensor::new(&[1, lambda.len()], lambda.as_slice().to_vec())?);
    let p = g.constant(Tensor::new(&[1, 1], vec![percent])?);
    let a = MixGate::mix_vars(&mut g, gv, lv, p)?;
    AttentionWeights::new(g.value(a).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::substream;

    fn w(v: &[f64]) -> AttentionWeights {
        AttentionWeights::new(v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let gamma = w(&[1.0, 0.0]);
        let lambda = w(&[0.0, 1.0]);
        assert_eq!(mix_with_percent(&gamma, &lambda, 1.0).unwrap(), lambda);
        assert_eq!(mix_with_percent(&gamma, &lambda, 0.0).unwrap(), gamma);
        assert_eq!(mix_with_percent(&gamma, &lambda, 0.5).unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn gate_saturation_selects_an_endpoint() {
        let mut store = ParamStore::<f64>::new();
        let gate = MixGate::new(&mut store, "mix", 3, &mut substream(0, "init")).unwrap();
        store.get_mut(gate.weight()).tensor.data_mut().fill(0.0);
        store.get_mut(gate.bias()).tensor.data_mut()[0] = 80.0;
        let gamma = w(&[0.2, 0.8]);
        let lambda = w(&[0.9, 0.1]);
        let (a, p) = gate.mix(&store, &gamma, &lambda, &[1.0, 2.0, 3.0]).unwrap();
        assert!(p > 0.0 && p <= 1.0);
        assert!((a.as_slice()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(mix_with_percent(&w(&[1.0]), &w(&[0.5, 0.5]), 0.5).is_err());
    }
}
