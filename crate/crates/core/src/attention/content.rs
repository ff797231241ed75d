use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Memory;
use crate::error::{Error, Result};
use crate::numcore::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Key/query match score used by content attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentScorerKind {
    /// `u^T tanh(W_k k + W_q q)`
    Additive,
    /// `k^T (W q)`
    Multiplicative,
    /// `k^T q / sqrt(d)`
    ScaledDotProduct,
}

#[derive(Debug, Clone, Copy)]
pub struct ContentScorer {
    pub kind: ContentScorerKind,
    pub dim: usize,
    w_k: Option<ParamId>,
    w_q: Option<ParamId>,
    u: Option<ParamId>,
}

impl ContentScorer {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        kind: ContentScorerKind,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (w_k, w_q, u) = match kind {
            ContentScorerKind::Additive => (
                Some(store.insert_matrix(format!("{prefix}.w_k"), dim, dim, rng)?),
                Some(store.insert_matrix(format!("{prefix}.w_q"), dim, dim, rng)?),
                Some(store.insert_matrix(format!("{prefix}.u"), dim, 1, rng)?),
            ),
            ContentScorerKind::Multiplicative => {
                (None, Some(store.insert_matrix(format!("{prefix}.w"), dim, dim, rng)?), None)
            }
            ContentScorerKind::ScaledDotProduct => (None, None, None),
        };
        Ok(ContentScorer { kind, dim, w_k, w_q, u })
    }

    pub fn w_k(&self) -> Option<ParamId> {
        self.w_k
    }

    pub fn w_q(&self) -> Option<ParamId> {
        self.w_q
    }

    pub fn u(&self) -> Option<ParamId> {
        self.u
    }

    /// Per-source precomputation (`W_k K` for the additive scorer).
    pub(crate) fn prepare_keys<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
    ) -> Result<Option<Var>> {
        match self.kind {
            ContentScorerKind::Additive => {
                let w_k = g.param(store, self.w_k.expect("additive scorer has w_k"));
                let flat = g.reshape(mem.states, &[mem.batch * mem.max_len, mem.dim])?;
                let proj = g.matmul(flat, w_k)?;
                Ok(Some(g.reshape(proj, &[mem.batch, mem.max_len, self.dim])?))
            }
            _ => Ok(None),
        }
    }

    /// Logits `[B, S]` for queries `[B, d]`.
    pub(crate) fn logits<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        query: Var,
    ) -> Result<Var> {
        let (b, s, d) = (mem.batch, mem.max_len, mem.dim);
        match self.kind {
            ContentScorerKind::ScaledDotProduct => {
                let q = g.reshape(query, &[b, d, 1])?;
                let raw = g.bmm(mem.states, q)?;
                let raw = g.reshape(raw, &[b, s])?;
                Ok(g.scale(raw, F::from_f64(1.0 / (d as f64).sqrt())))
            }
            ContentScorerKind::Multiplicative => {
                let w = g.param(store, self.w_q.expect("multiplicative scorer has w"));
                let qw = g.matmul(query, w)?;
                let qw = g.reshape(qw, &[b, d, 1])?;
                let raw = g.bmm(mem.states, qw)?;
                g.reshape(raw, &[b, s])
            }
            ContentScorerKind::Additive => {
                let keys = mem
                    .content_keys
                    .ok_or_else(|| Error::invalid("additive scorer used without prepared keys"))?;
                let w_q = g.param(store, self.w_q.expect("additive scorer has w_q"));
                let u = g.param(store, self.u.expect("additive scorer has u"));
                let qw = g.matmul(query, w_q)?;
                let qw = g.reshape(qw, &[b, 1, self.dim])?;
                let pre = g.add(keys, qw)?;
                let act = g.tanh(pre);
                let flat = g.reshape(act, &[b * s, self.dim])?;
                let sc = g.matmul(flat, u)?;
                g.reshape(sc, &[b, s])
            }
        }
    }

    /// Score of a single key/query pair.
    pub fn score<F: Float>(&self, store: &ParamStore<F>, key: &[F], query: &[F]) -> Result<F> {
        if key.len() != self.dim || query.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "content_score",
                lhs: vec![key.len()],
                rhs: vec![query.len()],
            });
        }
        let mut g = Graph::new();
        let states = g.constant(Tensor::new(&[1, 1, self.dim], key.to_vec())?);
        let mut mem = Memory::new(&mut g, states, &[1])?;
        mem.content_keys = self.prepare_keys(&mut g, store, &mem)?;
        let q = g.constant(Tensor::new(&[1, self.dim], query.to_vec())?);
        let out = self.logits(&mut g, store, &mem, q)?;
        Ok(g.value(out).data()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::substream;

    fn scorer(kind: ContentScorerKind, dim: usize) -> (ParamStore<f64>, ContentScorer) {
        let mut store = ParamStore::new();
        let s = ContentScorer::new(&mut store, "attn", kind, dim, &mut substream(0, "init")).unwrap();
        (store, s)
    }

    #[test]
    fn scaled_dot_of_ones() {
        let (store, s) = scorer(ContentScorerKind::ScaledDotProduct, 4);
        assert_eq!(s.score(&store, &[1.0; 4], &[1.0; 4]).unwrap(), 2.0);
    }

    #[test]
    fn additive_with_zero_projection_scores_zero() {
        let (mut store, s) = scorer(ContentScorerKind::Additive, 4);
        store.get_mut(s.u().unwrap()).tensor.data_mut().fill(0.0);
        assert_eq!(s.score(&store, &[0.3, -1.0, 2.0, 0.5], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn multiplicative_with_identity_is_dot_product() {
        let (mut store, s) = scorer(ContentScorerKind::Multiplicative, 3);
        let w = store.get_mut(s.w_q().unwrap()).tensor.data_mut();
        w.fill(0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let k = [0.5, -2.0, 1.0];
        let q = [2.0, 1.0, 3.0];
        let dot: f64 = k.iter().zip(&q).map(|(a, b)| a * b).sum();
        assert!((s.score(&store, &k, &q).unwrap() - dot).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (store, s) = scorer(ContentScorerKind::ScaledDotProduct, 4);
        assert!(s.score(&store, &[1.0; 3], &[1.0; 4]).is_err());
    }
}
