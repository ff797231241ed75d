use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sinusoid::encoding_matrix;
use super::Memory;
use crate::error::{Error, Result};
use crate::numcore::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Scores mixing content with sinusoidal positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScorerKind {
    /// `(k + p_s)^T (q + p_t) / sqrt(d)` with absolute encodings.
    Transformer,
    /// `(W_k k + W_p p_{s-t})^T (W_q q + b) / sqrt(d)` with a relative encoding.
    TransformerXl,
}

#[derive(Debug, Clone, Copy)]
pub struct PositionalScorer {
    pub kind: PositionalScorerKind,
    pub dim: usize,
    w_k: Option<ParamId>,
    w_p: Option<ParamId>,
    w_q: Option<ParamId>,
    bias: Option<ParamId>,
}

impl PositionalScorer {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        kind: PositionalScorerKind,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("positional scorer needs an even dimension, got {dim}")));
        }
        let mut s = PositionalScorer {
            kind,
            dim,
            w_k: None,
            w_p: None,
            w_q: None,
            bias: None,
        };
        if kind == PositionalScorerKind::TransformerXl {
            s.w_k = Some(store.insert_matrix(format!("{prefix}.w_k"), dim, dim, rng)?);
            s.w_p = Some(store.insert_matrix(format!("{prefix}.w_p"), dim, dim, rng)?);
            s.w_q = Some(store.insert_matrix(format!("{prefix}.w_q"), dim, dim, rng)?);
            s.bias = Some(store.insert_bias(format!("{prefix}.b"), dim)?);
        }
        Ok(s)
    }

    pub fn w_q(&self) -> Option<ParamId> {
        self.w_q
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    /// Keys with the step-independent part applied: `K + P` or `W_k K`.
    pub(crate) fn prepare_keys<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
    ) -> Result<Var> {
        let (b, s, d) = (mem.batch, mem.max_len, mem.dim);
        match self.kind {
            PositionalScorerKind::Transformer => {
                let pos = g.constant(encoding_matrix((0..s).map(|v| v as f64), d)?);
                g.add(mem.states, pos)
            }
            PositionalScorerKind::TransformerXl => {
                let w_k = g.param(store, self.w_k.expect("xl has w_k"));
                let flat = g.reshape(mem.states, &[b * s, d])?;
                let proj = g.matmul(flat, w_k)?;
                g.reshape(proj, &[b, s, d])
            }
        }
    }

    /// Logits `[B, S]` for queries `[B, d]` at decoding step `step`.
    pub(crate) fn logits<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        query: Var,
        step: usize,
    ) -> Result<Var> {
        let (b, s, d) = (mem.batch, mem.max_len, mem.dim);
        let keys = mem
            .positional_keys
            .ok_or_else(|| Error::invalid("positional scorer used without prepared keys"))?;
        let inv_sqrt_d = F::from_f64(1.0 / (d as f64).sqrt());
        let (keys, q) = match self.kind {
            PositionalScorerKind::Transformer => {
                let p_t = g.constant(encoding_matrix(std::iter::once(step as f64), d)?);
                (keys, g.add(query, p_t)?)
            }
            PositionalScorerKind::TransformerXl => {
                let offsets = (0..s).map(|src| src as f64 - step as f64);
                let rel = g.constant(encoding_matrix(offsets, d)?);
                let w_p = g.param(store, self.w_p.expect("xl has w_p"));
                let rel = g.matmul(rel, w_p)?;
                let keys = g.add(keys, rel)?;
                let w_q = g.param(store, self.w_q.expect("xl has w_q"));
                let bias = g.param(store, self.bias.expect("xl has b"));
                let qw = g.matmul(query, w_q)?;
                (keys, g.add(qw, bias)?)
            }
        };
        let q = g.reshape(q, &[b, d, 1])?;
        let raw = g.bmm(keys, q)?;
        let raw = g.reshape(raw, &[b, s])?;
        Ok(g.scale(raw, inv_sqrt_d))
    }

    /// Score of key `k` at source index `s` against query `q` at step `t`.
    pub fn score<F: Float>(
        &self,
        store: &ParamStore<F>,
        key: &[F],
        s: usize,
        query: &[F],
        t: usize,
    ) -> Result<F> {
        if key.len() != self.dim || query.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "positional_score",
                lhs: vec![key.len()],
                rhs: vec![query.len()],
            });
        }
        // Place the key at index `s` of an otherwise zero memory.
        let mut data = vec![F::zero(); (s + 1) * self.dim];
        data[s * self.dim..].copy_from_slice(key);
        let mut g = Graph::new();
        let states = g.constant(Tensor::new(&[1, s + 1, self.dim], data)?);
        let mut mem = Memory::new(&mut g, states, &[s + 1])?;
        mem.positional_keys = Some(self.prepare_keys(&mut g, store, &mem)?);
        let q = g.constant(Tensor::new(&[1, self.dim], query.to_vec())?);
        let out = self.logits(&mut g, store, &mem, q, t)?;
        Ok(g.value(out).data()[s])
    }
}
