//! Attenders: map a query and the encoder memory to a distribution over
//! source positions, then read a glimpse `g_t = V alpha_t`.

mod content;
mod glimpse;
pub mod location;
mod mix;
mod positional;
mod sinusoid;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use content::{ContentScorer, ContentScorerKind};
pub use glimpse::glimpse;
pub(crate) use glimpse::glimpse_var;
pub use location::{
    gaussian_attention, leaky_clamp, soft_staircase, LocationAttender, LocationConfig, LocationDiagnostics,
    LocationState, LocationStep, LocationVars,
};
pub use mix::{mix_with_percent, MixGate};
pub use positional::{PositionalScorer, PositionalScorerKind};
pub use sinusoid::sinusoidal_encoding;

use crate::error::{Error, Result};
use crate::numcore::{Float, Graph, ParamStore, Tensor, Var};

/// A probability mass function over source positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    /// Validates non-negativity and unit mass (to 1e-4, loose enough for
    /// weights computed in single precision).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("attention over zero positions"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("attention weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!("attention weights sum to {total}")));
        }
        Ok(AttentionWeights(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest weight; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.0.iter().enumerate() {
            if w > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Expected attended index `sum_s alpha_s * s`.
    pub fn expected_index(&self) -> f64 {
        self.0.iter().enumerate().map(|(s, w)| s as f64 * w).sum()
    }
}

/// Softmax of raw scores over source positions.
pub fn attention_from_scores(scores: &[f64]) -> Result<AttentionWeights> {
    if scores.is_empty() {
        return Err(Error::invalid("attention over zero positions"));
    }
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::from_vec(scores.to_vec()));
    let p = g.softmax(s, 0)?;
    AttentionWeights::new(g.value(p).data().to_vec())
}

/// Encoder memory for a batch, plus per-row position constants.
#[derive(Debug, Clone)]
pub struct Memory {
    /// `[B, S, d]`; rows beyond a sequence's length are padding.
    pub states: Var,
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub max_len: usize,
    pub dim: usize,
    /// `[B, S]` relative positions `s / (n - 1)` (0 when `n = 1`).
    pub(crate) rel_pos: Var,
    /// `[B, 1]` step size `1 / (n - 1)` (0 when `n = 1`).
    pub(crate) step_block: Var,
    /// `[B, 1]` of `1 / n`.
    pub(crate) inv_len: Var,
    pub(crate) ones: Var,
    pub(crate) content_keys: Option<Var>,
    pub(crate) positional_keys: Option<Var>,
}

impl Memory {
    pub fn new<F: Float>(g: &mut Graph<F>, states: Var, lengths: &[usize]) -> Result<Self> {
        let shape = g.shape(states).to_vec();
        if shape.len() != 3 || shape[0] != lengths.len() {
            return Err(Error::ShapeMismatch {
                op: "memory",
                lhs: shape,
                rhs: vec![lengths.len()],
            });
        }
        let (batch, max_len, dim) = (shape[0], shape[1], shape[2]);
        if lengths.iter().any(|&n| n == 0 || n > max_len) {
            return Err(Error::invalid("source lengths must be in [1, padded length]"));
        }
        let mut rel = vec![F::zero(); batch * max_len];
        let mut step = Vec::with_capacity(batch);
        let mut inv = Vec::with_capacity(batch);
        for (b, &n) in lengths.iter().enumerate() {
            if n > 1 {
                let denom = (n - 1) as f64;
                for s in 0..n {
                    rel[b * max_len + s] = F::from_f64(s as f64 / denom);
                }
                step.push(F::from_f64(1.0 / denom));
            } else {
                step.push(F::zero());
            }
            inv.push(F::from_f64(1.0 / n as f64));
        }
        Ok(Memory {
            states,
            lengths: lengths.to_vec(),
            batch,
            max_len,
            dim,
            rel_pos: g.constant(Tensor::new(&[batch, max_len], rel)?),
            step_block: g.constant(Tensor::new(&[batch, 1], step)?),
            inv_len: g.constant(Tensor::new(&[batch, 1], inv)?),
            ones: g.constant(Tensor::ones(&[batch, 1])),
            content_keys: None,
            positional_keys: None,
        })
    }
}

/// Which attention mechanism a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Additive,
    Multiplicative,
    ScaledDot,
    Transformer,
    TransformerXl,
    Location,
    Mix,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 7] = [
        AttentionKind::Additive,
        AttentionKind::Multiplicative,
        AttentionKind::ScaledDot,
        AttentionKind::Transformer,
        AttentionKind::TransformerXl,
        AttentionKind::Location,
        AttentionKind::Mix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Additive => "additive",
            AttentionKind::Multiplicative => "multiplicative",
            AttentionKind::ScaledDot => "scaled_dot",
            AttentionKind::Transformer => "transformer",
            AttentionKind::TransformerXl => "transformer_xl",
            AttentionKind::Location => "location",
            AttentionKind::Mix => "mix",
        }
    }

    /// True for the three content-only scorers.
    pub fn is_content_only(self) -> bool {
        matches!(
            self,
            AttentionKind::Additive | AttentionKind::Multiplicative | AttentionKind::ScaledDot
        )
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = AttentionKind::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!("unknown attention kind `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Which attention the previous-mean building block is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSource {
    /// The final (mixed) attention of the step.
    #[default]
    Mixed,
    /// The location attention only.
    Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenderConfig {
    pub kind: AttentionKind,
    /// Content scorer used inside the mix attender.
    #[serde(default = "default_mix_content")]
    pub mix_content: ContentScorerKind,
    #[serde(default)]
    pub location: LocationConfig,
    #[serde(default)]
    pub mean_source: MeanSource,
}

fn default_mix_content() -> ContentScorerKind {
    ContentScorerKind::ScaledDotProduct
}

impl AttenderConfig {
    pub fn new(kind: AttentionKind) -> Self {
        AttenderConfig {
            kind,
            mix_content: default_mix_content(),
            location: LocationConfig::default(),
            mean_source: MeanSource::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Attender {
    Content(ContentScorer),
    Positional(PositionalScorer),
    Location(LocationAttender),
    Mix {
        content: ContentScorer,
        location: LocationAttender,
        gate: MixGate,
        mean_source: MeanSource,
    },
}

/// Per-sequence recurrent state of an attender (only location-based
/// attenders carry any).
#[derive(Debug, Clone, Copy)]
pub struct AttenderState {
    pub location: Option<LocationVars>,
}

/// Graph outputs of one attention step.
#[derive(Debug, Clone, Copy)]
pub struct AttentionStep {
    /// Final attention `[B, S]`.
    pub alpha: Var,
    pub gamma: Option<Var>,
    pub lambda: Option<Var>,
    pub location: Option<LocationStep>,
    /// Location share of the mix `[B, 1]`.
    pub mix_percent: Option<Var>,
}

/// Serializable view of one attention step for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_blocks: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_percent: Option<f64>,
}

impl AttentionStep {
    /// Extracts row `b` (first `n` positions) as plain values.
    pub fn trace_row<F: Float>(&self, g: &Graph<F>, b: usize, n: usize) -> AttentionTrace {
        let row = |v: Var| -> Vec<f64> {
            let t = g.value(v);
            let cols = t.shape()[1];
            t.data()[b * cols..b * cols + n].iter().map(|x| x.as_f64()).collect()
        };
        let scalar = |v: Var| g.value(v).data()[b].as_f64();
        let triple = |v: Var| {
            let d = &g.value(v).data()[b * 3..b * 3 + 3];
            [d[0].as_f64(), d[1].as_f64(), d[2].as_f64()]
        };
        AttentionTrace {
            alpha: row(self.alpha),
            gamma: self.gamma.map(row),
            lambda: self.lambda.map(row),
            mu: self.location.map(|l| scalar(l.mu)),
            sigma: self.location.map(|l| scalar(l.sigma)),
            rho: self.location.map(|l| triple(l.rho)),
            building_blocks: self.location.map(|l| triple(l.blocks)),
            lambda_percent: self.mix_percent.map(scalar),
        }
    }
}

impl Attender {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        config: &AttenderConfig,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match config.kind {
            AttentionKind::Additive => {
                Attender::Content(ContentScorer::new(store, prefix, ContentScorerKind::Additive, dim, rng)?)
            }
            AttentionKind::Multiplicative => {
                Attender::Content(ContentScorer::new(store, prefix, ContentScorerKind::Multiplicative, dim, rng)?)
            }
            AttentionKind::ScaledDot => {
                Attender::Content(ContentScorer::new(store, prefix, ContentScorerKind::ScaledDotProduct, dim, rng)?)
            }
            AttentionKind::Transformer => Attender::Positional(PositionalScorer::new(
                store,
                prefix,
                PositionalScorerKind::Transformer,
                dim,
                rng,
            )?),
            AttentionKind::TransformerXl => Attender::Positional(PositionalScorer::new(
                store,
                prefix,
                PositionalScorerKind::TransformerXl,
                dim,
                rng,
            )?),
            AttentionKind::Location => Attender::Location(LocationAttender::new(
                store,
                &format!("{prefix}.location"),
                dim,
                config.location,
                rng,
            )?),
            AttentionKind::Mix => Attender::Mix {
                content: ContentScorer::new(store, &format!("{prefix}.content"), config.mix_content, dim, rng)?,
                location: LocationAttender::new(store, &format!("{prefix}.location"), dim, config.location, rng)?,
                gate: MixGate::new(store, &format!("{prefix}.mix"), dim, rng)?,
                mean_source: config.mean_source,
            },
        })
    }

    /// Wraps encoder states `[B, S, d]` and runs step-independent key
    /// projections.
    pub fn prepare<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        states: Var,
        lengths: &[usize],
    ) -> Result<Memory> {
        let mut mem = Memory::new(g, states, lengths)?;
        match self {
            Attender::Content(c) | Attender::Mix { content: c, .. } => {
                mem.content_keys = c.prepare_keys(g, store, &mem)?;
            }
            Attender::Positional(p) => {
                mem.positional_keys = Some(p.prepare_keys(g, store, &mem)?);
            }
            Attender::Location(_) => {}
        }
        Ok(mem)
    }

    pub fn init_state<F: Float>(&self, g: &mut Graph<F>, batch: usize) -> AttenderState {
        let location = match self {
            Attender::Location(l) | Attender::Mix { location: l, .. } => Some(l.init_vars(g, batch)),
            _ => None,
        };
        AttenderState { location }
    }

    /// Attention for queries `[B, d]` at decoding step `step`.
    pub fn attend<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        query: Var,
        step: usize,
        state: &mut AttenderState,
    ) -> Result<AttentionStep> {
        match self {
            Attender::Content(c) => {
                let logits = c.logits(g, store, mem, query)?;
                let gamma = g.masked_softmax(logits, &mem.lengths)?;
                Ok(AttentionStep {
                    alpha: gamma,
                    gamma: Some(gamma),
                    lambda: None,
                    location: None,
                    mix_percent: None,
                })
            }
            Attender::Positional(p) => {
                let logits = p.logits(g, store, mem, query, step)?;
                let alpha = g.masked_softmax(logits, &mem.lengths)?;
                Ok(AttentionStep {
                    alpha,
                    gamma: None,
                    lambda: None,
                    location: None,
                    mix_percent: None,
                })
            }
            Attender::Location(l) => {
                let vars = state
                    .location
                    .as_mut()
                    .ok_or_else(|| Error::invalid("location attender without state"))?;
                let out = l.step(g, store, mem, query, vars)?;
                vars.record_mean(g, mem, out.lambda)?;
                Ok(AttentionStep {
                    alpha: out.lambda,
                    gamma: None,
                    lambda: Some(out.lambda),
                    location: Some(out),
                    mix_percent: None,
                })
            }
            Attender::Mix {
                content,
                location,
                gate,
                mean_source,
            } => {
                let vars = state
                    .location
                    .as_mut()
                    .ok_or_else(|| Error::invalid("mix attender without state"))?;
                let logits = content.logits(g, store, mem, query)?;
                let gamma = g.masked_softmax(logits, &mem.lengths)?;
                let out = location.step(g, store, mem, query, vars)?;
                let percent = gate.percent(g, store, query)?;
                let alpha = MixGate::mix_vars(g, gamma, out.lambda, percent)?;
                let source = match mean_source {
                    MeanSource::Mixed => alpha,
                    MeanSource::Location => out.lambda,
                };
                vars.record_mean(g, mem, source)?;
                Ok(AttentionStep {
                    alpha,
                    gamma: Some(gamma),
                    lambda: Some(out.lambda),
                    location: Some(out),
                    mix_percent: Some(percent),
                })
            }
        }
    }
}
