//! Teacher-forced training with Adam and batch evaluation.

pub mod checks;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{attn_loss, seq_acc, seq_acc_be, EvalReport, Hull};
use crate::numcore::rng::substream;
use crate::numcore::{AdamConfig, AdamState, Graph};
use crate::seq2seq::{encode_examples, Mode, Model, ModelConfig};
use crate::tasks::{DatasetSplits, TaskExample};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
    /// Share of the training split held back for per-epoch logging.
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed,
            shuffle: true,
            validation_fraction: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_seq_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }
}

/// Mean teacher-forced cross-entropy of `examples` in evaluation mode.
pub fn mean_loss(model: &Model<f32>, examples: &[TaskExample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let (src, tgt) = encode_examples(chunk)?;
        let mut g = Graph::new();
        let fwd = model.teacher_forced(&mut g, &src, &tgt, Mode::Eval, &mut substream(0, "unused"))?;
        let loss = model.loss(&mut g, &fwd, &tgt)?;
        let n: usize = tgt.iter().map(Vec::len).sum();
        total += g.value(loss).data()[0] as f64 * n as f64;
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

/// Trains a fresh model on `train`. `on_epoch` sees each log record as it
/// is produced.
pub fn train_model(
    model_config: ModelConfig,
    train: &[TaskExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mut model = Model::<f32>::new(model_config)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut substream(config.seed, "holdback"));
    let n_val = (train.len() as f64 * config.validation_fraction).floor() as usize;
    let (fit_idx, val_idx) = order.split_at(train.len() - n_val);
    let mut fit_idx = fit_idx.to_vec();
    fit_idx.sort_unstable();
    let validation: Vec<TaskExample> = val_idx.iter().map(|&i| train[i].clone()).collect();

    let mut adam = AdamState::new(&model.store, config.adam);
    let mut dropout_rng = substream(config.seed, "dropout");
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        if config.shuffle {
            fit_idx.shuffle(&mut substream(config.seed, &format!("shuffle.{epoch}")));
        }
        let (mut loss_sum, mut loss_tokens) = (0.0, 0usize);
        for (batch, idx) in fit_idx.chunks(config.batch_size).enumerate() {
            let examples: Vec<TaskExample> = idx.iter().map(|&i| train[i].clone()).collect();
            let (src, tgt) = encode_examples(&examples)?;
            let mut g = Graph::new();
            let fwd = model.teacher_forced(&mut g, &src, &tgt, Mode::Train, &mut dropout_rng)?;
            let loss = model.loss(&mut g, &fwd, &tgt)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let n: usize = tgt.iter().map(Vec::len).sum();
            loss_sum += value as f64 * n as f64;
            loss_tokens += n;
            let grads = g.backward(loss)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&grads, &mut model.store);
            adam.step(&mut model.store)?;
        }
        let validation_seq_acc = if validation.is_empty() {
            None
        } else {
            Some(exact_match(&model, &validation)?)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / loss_tokens.max(1) as f64,
            validation_seq_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((model, log))
}

const EVAL_BATCH: usize = 128;

fn max_len_for(examples: &[TaskExample]) -> usize {
    2 * examples.iter().map(|e| e.target.len()).max().unwrap_or(1) + 5
}

fn exact_match(model: &Model<f32>, examples: &[TaskExample]) -> Result<f64> {
    let max_len = max_len_for(examples);
    let mut hits = 0.0;
    for chunk in examples.chunks(EVAL_BATCH) {
        let (src, _) = encode_examples(chunk)?;
        for (d, ex) in model.greedy_decode_batch(&src, max_len, false)?.iter().zip(chunk) {
            hits += seq_acc(&d.prediction(), &ex.target);
        }
    }
    Ok(hits / examples.len() as f64)
}

/// Per-example outcome of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub prediction: Vec<String>,
    pub seq_acc: f64,
    pub seq_acc_be: f64,
    pub attn_loss: f64,
}

/// Greedy-decodes and scores every example of one split.
pub fn evaluate_examples(model: &Model<f32>, examples: &[TaskExample]) -> Result<Vec<ExampleResult>> {
    let max_len = max_len_for(examples);
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let (src, tgt) = encode_examples(chunk)?;
        let decoded = model.greedy_decode_batch(&src, max_len, false)?;
        let attention = model.teacher_forced_attention(&src, &tgt)?;
        for ((d, ex), alpha) in decoded.iter().zip(chunk).zip(&attention) {
            let pred = d.prediction();
            out.push(ExampleResult {
                seq_acc: seq_acc(&pred, &ex.target),
                seq_acc_be: seq_acc_be(&pred, &ex.target),
                attn_loss: attn_loss(alpha, &ex.gold, &ex.target)?,
                prediction: pred,
            });
        }
    }
    Ok(out)
}

/// Encoder states of every source position of every example.
pub fn split_states(model: &Model<f32>, examples: &[TaskExample]) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::new();
    for chunk in examples.chunks(EVAL_BATCH) {
        let (src, _) = encode_examples(chunk)?;
        states.extend(model.encoder_states(&src)?.into_iter().flatten());
    }
    Ok(states)
}

/// One report per named split. With `hull`, encoder states are checked
/// against the per-dimension range seen on the train split.
pub fn evaluate_model(
    model: &Model<f32>,
    splits: &DatasetSplits,
    names: &[&str],
    hull: bool,
) -> Result<Vec<EvalReport>> {
    let fitted = if hull {
        let train = split_states(model, &splits.train)?;
        Some(Hull::fit(train.iter().map(Vec::as_slice))?)
    } else {
        None
    };
    let mut reports = Vec::with_capacity(names.len());
    for &name in names {
        let examples = splits
            .split(name)
            .ok_or_else(|| Error::invalid(format!("unknown split `{name}`")))?;
        let results = evaluate_examples(model, examples)?;
        let n = results.len().max(1) as f64;
        let hull = match &fitted {
            Some(h) => {
                let states = split_states(model, examples)?;
                Some(h.fractions(states.iter().map(Vec::as_slice))?)
            }
            None => None,
        };
        reports.push(EvalReport {
            split: name.to_string(),
            seq_acc: results.iter().map(|r| r.seq_acc).sum::<f64>() / n,
            seq_acc_be: results.iter().map(|r| r.seq_acc_be).sum::<f64>() / n,
            attn_loss: results.iter().map(|r| r.attn_loss).sum::<f64>() / n,
            n_examples: results.len(),
            hull,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::tasks::{generate_splits, Variant};

    fn tiny(kind: AttentionKind) -> ModelConfig {
        let mut c = ModelConfig::new(kind, 0);
        c.embedding_dim = 8;
        c.hidden_dim = 16;
        c.attention.location.weighter_dim = 8;
        c
    }

    #[test]
    fn one_epoch_reduces_loss_and_is_deterministic() {
        let splits = generate_splits(Variant::Standard, 0).unwrap();
        let train = &splits.train[..10];
        let mut cfg = TrainConfig::new(1);
        cfg.epochs = 1;
        cfg.batch_size = 2;
        cfg.validation_fraction = 0.0;
        cfg.adam.lr = 1e-2;
        let before = mean_loss(&Model::new(tiny(AttentionKind::Location)).unwrap(), train, 10).unwrap();
        let (m, log) = train_model(tiny(AttentionKind::Location), train, &cfg, |_| {}).unwrap();
        let after = mean_loss(&m, train, 10).unwrap();
        assert!(after < before, "{after} >= {before}");
        assert_eq!(log.epochs.len(), 1);
        let (m2, _) = train_model(tiny(AttentionKind::Location), train, &cfg, |_| {}).unwrap();
        for (a, b) in m.store.iter().zip(m2.store.iter()) {
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
    }
}
