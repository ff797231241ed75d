//! GRU encoder-decoder with a pluggable attender.
//!
//! Encoder states carry a residual connection from the (projected) token
//! embeddings; the decoder starts from the encoder's final state after
//! bottleneck dropout, queries the attender with its hidden state and
//! predicts from `[d_t ; g_t]`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    glimpse_var, AttentionKind, AttentionStep, AttentionTrace, Attender, AttenderConfig, AttenderState, Memory,
};
use crate::error::{Error, Result};
use crate::numcore::rng::substream;
use crate::numcore::{checkpoint, dropout_mask, Float, Graph, GruParams, ParamId, ParamStore, Tensor, Var};
use crate::tasks::{TaskExample, Vocab, EOS};

/// Per-example rows, e.g. logits per step or token ids per sequence.
pub type Rows<T> = Vec<Vec<T>>;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub bottleneck_dropout: f64,
    pub attention: AttenderConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: AttentionKind, seed: u64) -> Self {
        ModelConfig {
            embedding_dim: 64,
            hidden_dim: 128,
            bottleneck_dropout: 0.5,
            attention: AttenderConfig::new(kind),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.attention.location.weighter_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.bottleneck_dropout) {
            return Err(Error::invalid(format!(
                "bottleneck dropout {} not in [0, 1)",
                self.bottleneck_dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Parts {
    enc_embed: ParamId,
    enc_gru: GruParams,
    residual: ParamId,
    dec_embed: ParamId,
    dec_gru: GruParams,
    attender: Attender,
    out_w: ParamId,
    out_b: ParamId,
}

/// Batched encoder output living on a graph.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub memory: Memory,
    /// `[B, H]`, after bottleneck dropout.
    pub final_hidden: Var,
}

/// Decoder state for a batch.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    /// `[B, H]`; also the attention query.
    pub hidden: Var,
    pub attender: AttenderState,
    pub step: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// `[B, V]`
    pub logits: Var,
    pub attention: AttentionStep,
    /// `[B, H]`
    pub glimpse: Var,
}

/// Teacher-forced pass over a batch.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[T * B, V]`, time-major.
    pub logits: Var,
    pub steps: Vec<AttentionStep>,
    pub encoded: Encoded,
}

/// One decoding step of a single sequence, as dumped by `inspect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub token: String,
    #[serde(flatten)]
    pub attention: AttentionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// Emitted tokens, without `<sos>` or `<eos>`.
    pub tokens: Vec<String>,
    pub emitted_eos: bool,
    /// True when decoding stopped at `max_len` without `<eos>`.
    pub hit_max_len: bool,
    pub trace: Vec<StepRecord>,
}

impl Decoded {
    /// Prediction as compared by the metrics: tokens plus `<eos>` if emitted.
    pub fn prediction(&self) -> Vec<String> {
        let mut p = self.tokens.clone();
        if self.emitted_eos {
            p.push(EOS.to_string());
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct Model<F: Float = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    parts: Parts,
}

fn build<F: Float>(config: &ModelConfig) -> Result<(ParamStore<F>, Parts)> {
    config.validate()?;
    let (e, h, v) = (config.embedding_dim, config.hidden_dim, Vocab::new().len());
    let mut rng = substream(config.seed, "init");
    let mut store = ParamStore::new();
    let parts = Parts {
        enc_embed: store.insert_matrix("encoder.embedding", v, e, &mut rng)?,
        enc_gru: GruParams::new(&mut store, "encoder.gru", e, h, &mut rng)?,
        residual: store.insert_matrix("encoder.residual", e, h, &mut rng)?,
        dec_embed: store.insert_matrix("decoder.embedding", v, e, &mut rng)?,
        dec_gru: GruParams::new(&mut store, "decoder.gru", e, h, &mut rng)?,
        attender: Attender::new(&mut store, "attention", &config.attention, h, &mut rng)?,
        out_w: store.insert_matrix("output.w", 2 * h, v, &mut rng)?,
        out_b: store.insert_bias("output.b", v)?,
    };
    Ok((store, parts))
}

/// Pads id sequences with `<pad>` into a time-major id list.
fn time_major(seqs: &[Vec<usize>], len: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(seqs.len() * len);
    for t in 0..len {
        ids.extend(seqs.iter().map(|s| s.get(t).copied().unwrap_or(Vocab::PAD_ID)));
    }
    ids
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Float>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<F: Float> Model<F> {
    /// Fresh model with parameters initialized from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let (store, parts) = build(&config)?;
        Ok(Model { config, store, parts })
    }

    /// Model around an existing parameter store, which must match the
    /// layout `config` produces.
    pub fn from_store(config: ModelConfig, store: ParamStore<F>) -> Result<Self> {
        let (fresh, parts) = build::<F>(&config)?;
        if fresh.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, config expects {}",
                store.len(),
                fresh.len()
            )));
        }
        for (a, b) in fresh.iter().zip(store.iter()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    b.name,
                    b.tensor.shape(),
                    a.name,
                    a.tensor.shape()
                )));
            }
        }
        Ok(Model { config, store, parts })
    }

    /// Same architecture around another store of identical layout.
    pub fn with_store(&self, store: ParamStore<F>) -> Model<F> {
        Model {
            config: self.config,
            store,
            parts: self.parts,
        }
    }

    pub fn cast<G: Float>(&self) -> Model<G> {
        Model {
            config: self.config,
            store: self.store.cast(),
            parts: self.parts,
        }
    }

    pub fn attender(&self) -> &Attender {
        &self.parts.attender
    }

    /// Encodes padded sources (`<pad>` beyond each length).
    pub fn encode<R: Rng>(
        &self,
        g: &mut Graph<F>,
        sources: &[Vec<usize>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Encoded> {
        let b = sources.len();
        let lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
        let s = lengths.iter().copied().max().unwrap_or(0);
        if b == 0 || lengths.contains(&0) {
            return Err(Error::invalid("cannot encode an empty batch or sequence"));
        }
        let p = &self.parts;
        let h_dim = self.config.hidden_dim;
        let store = &self.store;
        let table = g.param(store, p.enc_embed);
        let emb = g.embedding(table, &time_major(sources, s))?;
        let xw = p.enc_gru.project_input(g, store, emb)?;
        let residual = g.param(store, p.residual);
        let res = g.matmul(emb, residual)?;

        let mut h = g.constant(Tensor::zeros(&[b, h_dim]));
        let mut states = Vec::with_capacity(s);
        for t in 0..s {
            let x_t = g.narrow(xw, 0, t * b, b)?;
            let next = p.enc_gru.step_projected(g, store, x_t, h)?;
            h = if lengths.iter().all(|&n| t < n) {
                next
            } else {
                let mask: Vec<F> = lengths.iter().map(|&n| if t < n { F::one() } else { F::zero() }).collect();
                let mask = g.constant(Tensor::new(&[b, 1], mask)?);
                let delta = g.sub(next, h)?;
                let kept = g.mul(delta, mask)?;
                g.add(h, kept)?
            };
            let r_t = g.narrow(res, 0, t * b, b)?;
            states.push(g.add(h, r_t)?);
        }
        let flat = g.concat(&states, 1)?;
        let states = g.reshape(flat, &[b, s, h_dim])?;
        let mask = dropout_mask(&[b, h_dim], self.config.bottleneck_dropout, mode == Mode::Train, rng)?;
        let mask = g.constant(mask);
        let final_hidden = g.mul(h, mask)?;
        let memory = p.attender.prepare(g, store, states, &lengths)?;
        Ok(Encoded { memory, final_hidden })
    }

    pub fn init_decoder(&self, g: &mut Graph<F>, enc: &Encoded) -> DecoderState {
        DecoderState {
            hidden: enc.final_hidden,
            attender: self.parts.attender.init_state(g, enc.memory.batch),
            step: 0,
        }
    }

    /// Feeds `prev` (one token id per row) and predicts the next token.
    pub fn decode_step(
        &self,
        g: &mut Graph<F>,
        enc: &Encoded,
        prev: &[usize],
        state: &mut DecoderState,
    ) -> Result<StepOutput> {
        let p = &self.parts;
        let store = &self.store;
        if prev.len() != enc.memory.batch {
            return Err(Error::ShapeMismatch {
                op: "decode_step",
                lhs: vec![prev.len()],
                rhs: vec![enc.memory.batch],
            });
        }
        let table = g.param(store, p.dec_embed);
        let x = g.embedding(table, prev)?;
        state.hidden = p.dec_gru.step(g, store, x, state.hidden)?;
        let attention = p
            .attender
            .attend(g, store, &enc.memory, state.hidden, state.step, &mut state.attender)?;
        let glimpse = glimpse_var(g, &enc.memory, attention.alpha)?;
        let features = g.concat(&[state.hidden, glimpse], 1)?;
        let w = g.param(store, p.out_w);
        let bias = g.param(store, p.out_b);
        let logits = g.matmul(features, w)?;
        let logits = g.add(logits, bias)?;
        state.step += 1;
        Ok(StepOutput {
            logits,
            attention,
            glimpse,
        })
    }

    /// Teacher-forced pass: inputs are `<sos>` then the gold targets;
    /// `targets` include the final `<eos>`.
    pub fn teacher_forced<R: Rng>(
        &self,
        g: &mut Graph<F>,
        sources: &[Vec<usize>],
        targets: &[Vec<usize>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        if sources.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "teacher_forced",
                lhs: vec![sources.len()],
                rhs: vec![targets.len()],
            });
        }
        if targets.iter().any(|t| t.last() != Some(&Vocab::EOS_ID)) {
            return Err(Error::invalid("targets must end with <eos>"));
        }
        let encoded = self.encode(g, sources, mode, rng)?;
        let t_max = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut state = self.init_decoder(g, &encoded);
        let mut prev = vec![Vocab::SOS_ID; sources.len()];
        let mut logits = Vec::with_capacity(t_max);
        let mut steps = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let out = self.decode_step(g, &encoded, &prev, &mut state)?;
            logits.push(out.logits);
            steps.push(out.attention);
            prev = targets.iter().map(|s| s.get(t).copied().unwrap_or(Vocab::PAD_ID)).collect();
        }
        let logits = g.concat(&logits, 0)?;
        Ok(Forward {
            logits,
            steps,
            encoded,
        })
    }

    /// Mean cross-entropy over all non-padded target tokens.
    pub fn loss(&self, g: &mut Graph<F>, fwd: &Forward, targets: &[Vec<usize>]) -> Result<Var> {
        let t_max = fwd.steps.len();
        let ids = time_major(targets, t_max);
        let weights: Vec<F> = (0..t_max)
            .flat_map(|t| targets.iter().map(move |s| if t < s.len() { F::one() } else { F::zero() }))
            .collect();
        g.cross_entropy(fwd.logits, &ids, &weights)
    }

    /// Greedy decoding of a batch, up to `max_len` steps per sequence.
    pub fn greedy_decode_batch(&self, sources: &[Vec<usize>], max_len: usize, trace: bool) -> Result<Vec<Decoded>> {
        if max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        let vocab = Vocab::new();
        let mut g = Graph::new();
        let mut rng = substream(0, "unused");
        let enc = self.encode(&mut g, sources, Mode::Eval, &mut rng)?;
        let mut state = self.init_decoder(&mut g, &enc);
        let mut prev = vec![Vocab::SOS_ID; sources.len()];
        let mut out: Vec<Decoded> = sources
            .iter()
            .map(|_| Decoded {
                tokens: Vec::new(),
                emitted_eos: false,
                hit_max_len: false,
                trace: Vec::new(),
            })
            .collect();
        for step in 0..max_len {
            let so = self.decode_step(&mut g, &enc, &prev, &mut state)?;
            let logits = g.value(so.logits);
            let v = logits.shape()[1];
            for (b, d) in out.iter_mut().enumerate() {
                let tok = argmax(&logits.data()[b * v..(b + 1) * v]);
                prev[b] = tok;
                if d.emitted_eos {
                    continue;
                }
                if trace {
                    d.trace.push(StepRecord {
                        step,
                        token: vocab.token(tok)?.to_string(),
                        attention: so.attention.trace_row(&g, b, sources[b].len()),
                    });
                }
                if tok == Vocab::EOS_ID {
                    d.emitted_eos = true;
                } else {
                    d.tokens.push(vocab.token(tok)?.to_string());
                }
            }
            if out.iter().all(|d| d.emitted_eos) {
                break;
            }
        }
        for d in &mut out {
            d.hit_max_len = !d.emitted_eos;
        }
        Ok(out)
    }

    /// Greedy decoding of one tokenized source.
    pub fn greedy_decode<S: AsRef<str>>(&self, source: &[S], max_len: usize, trace: bool) -> Result<Decoded> {
        let ids = Vocab::new().encode(source)?;
        Ok(self.greedy_decode_batch(&[ids], max_len, trace)?.remove(0))
    }

    /// Teacher-forced attention rows (`alpha`, one per target token, over
    /// the source) for each example of a batch.
    pub fn teacher_forced_attention(&self, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut g = Graph::new();
        let mut rng = substream(0, "unused");
        let fwd = self.teacher_forced(&mut g, sources, targets, Mode::Eval, &mut rng)?;
        Ok((0..sources.len())
            .map(|b| {
                (0..targets[b].len())
                    .map(|t| {
                        let a = g.value(fwd.steps[t].alpha);
                        let s = a.shape()[1];
                        a.data()[b * s..b * s + sources[b].len()].iter().map(|x| x.as_f64()).collect()
                    })
                    .collect()
            })
            .collect())
    }

    /// Teacher-forced logits and attention for one example.
    pub fn teacher_forced_forward(&self, example: &TaskExample) -> Result<(Rows<f64>, Rows<f64>)> {
        let vocab = Vocab::new();
        let src = vocab.encode(&example.input)?;
        let tgt = vocab.encode(&example.target)?;
        let mut g = Graph::new();
        let mut rng = substream(0, "unused");
        let fwd = self.teacher_forced(&mut g, std::slice::from_ref(&src), &[tgt], Mode::Eval, &mut rng)?;
        let logits = g.value(fwd.logits);
        let logits = (0..logits.shape()[0]).map(|r| logits.row(r).iter().map(|x| x.as_f64()).collect()).collect();
        let attn = fwd
            .steps
            .iter()
            .map(|s| g.value(s.alpha).data()[..src.len()].iter().map(|x| x.as_f64()).collect())
            .collect();
        Ok((logits, attn))
    }

    /// Encoder states (valid rows only) for each source, in eval mode.
    pub fn encoder_states(&self, sources: &[Vec<usize>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut g = Graph::new();
        let mut rng = substream(0, "unused");
        let enc = self.encode(&mut g, sources, Mode::Eval, &mut rng)?;
        let st = g.value(enc.memory.states);
        let (s, h) = (st.shape()[1], st.shape()[2]);
        Ok(sources
            .iter()
            .enumerate()
            .map(|(b, src)| {
                (0..src.len())
                    .map(|i| st.data()[(b * s + i) * h..(b * s + i + 1) * h].iter().map(|x| x.as_f64()).collect())
                    .collect()
            })
            .collect())
    }
}

impl Model<f32> {
    /// Writes `config.json` and the parameter checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.config)? + "\n")?;
        checkpoint::save(&self.store, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let config: ModelConfig = serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Model::from_store(config, checkpoint::load(dir)?)
    }
}

/// Encodes examples' sources and targets as id sequences.
pub fn encode_examples(examples: &[TaskExample]) -> Result<(Rows<usize>, Rows<usize>)> {
    let vocab = Vocab::new();
    let src = examples.iter().map(|e| vocab.encode(&e.input)).collect::<Result<_>>()?;
    let tgt = examples.iter().map(|e| vocab.encode(&e.target)).collect::<Result<_>>()?;
    Ok((src, tgt))
}
