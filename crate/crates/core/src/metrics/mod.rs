//! Sequence accuracy, accuracy before `<eos>`, attention loss and the
//! rectangular-hull extrapolation diagnostic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::EOS;

fn before_eos<S: AsRef<str>>(seq: &[S]) -> &[S] {
    let end = seq.iter().position(|t| t.as_ref() == EOS).unwrap_or(seq.len());
    &seq[..end]
}

fn same<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_ref() == y.as_ref())
}

/// 1 iff the prediction equals the target, `<eos>` position included.
pub fn seq_acc<A: AsRef<str>, B: AsRef<str>>(pred: &[A], target: &[B]) -> f64 {
    if same(pred, target) {
        1.0
    } else {
        0.0
    }
}

/// 1 iff the tokens the model emitted before its own `<eos>` match the
/// target's tokens at the same positions. An overlong prediction is
/// compared on the target's pre-`<eos>` length.
pub fn seq_acc_be<A: AsRef<str>, B: AsRef<str>>(pred: &[A], target: &[B]) -> f64 {
    let p = before_eos(pred);
    let t = before_eos(target);
    let n = p.len().min(t.len());
    if same(&p[..n], &t[..n]) {
        1.0
    } else {
        0.0
    }
}

/// Mean over pre-`<eos>` target steps of `(E_t - g_t)^2`, where
/// `E_t = sum_s alpha[t][s] * s` is the expected attended index.
pub fn attn_loss<B: AsRef<str>>(alpha: &[Vec<f64>], gold: &[usize], target: &[B]) -> Result<f64> {
    if alpha.len() != gold.len() || gold.len() != target.len() {
        return Err(Error::invalid(format!(
            "attention has {} rows, gold {} entries, target {} tokens",
            alpha.len(),
            gold.len(),
            target.len()
        )));
    }
    let steps = before_eos(target).len();
    if steps == 0 {
        return Ok(0.0);
    }
    let total: f64 = alpha[..steps]
        .iter()
        .zip(gold)
        .map(|(row, &g)| {
            let e: f64 = row.iter().enumerate().map(|(s, a)| s as f64 * a).sum();
            (e - g as f64).powi(2)
        })
        .sum();
    Ok(total / steps as f64)
}

/// Per-dimension `[min, max]` of training encoder states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hull {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fractions of test encoder states falling outside the training hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullFractions {
    /// Fraction of (state, dimension) entries outside their interval.
    pub feature_fraction_outside: f64,
    /// Fraction of states with at least one dimension outside.
    pub state_fraction_outside: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullReport {
    pub hull: Hull,
    pub splits: BTreeMap<String, HullFractions>,
}

impl Hull {
    pub fn fit<'a>(states: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut it = states.into_iter();
        let first = it.next().ok_or_else(|| Error::invalid("hull needs at least one training state"))?;
        let mut hull = Hull {
            min: first.to_vec(),
            max: first.to_vec(),
        };
        for s in it {
            if s.len() != hull.min.len() {
                return Err(Error::ShapeMismatch {
                    op: "hull_fit",
                    lhs: vec![hull.min.len()],
                    rhs: vec![s.len()],
                });
            }
            for (d, &v) in s.iter().enumerate() {
                hull.min[d] = hull.min[d].min(v);
                hull.max[d] = hull.max[d].max(v);
            }
        }
        Ok(hull)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn fractions<'a>(&self, states: impl IntoIterator<Item = &'a [f64]>) -> Result<HullFractions> {
        let (mut n_states, mut n_flagged, mut n_out) = (0usize, 0usize, 0usize);
        for s in states {
            if s.len() != self.dim() {
                return Err(Error::ShapeMismatch {
                    op: "hull_diagnostic",
                    lhs: vec![self.dim()],
                    rhs: vec![s.len()],
                });
            }
            let out = s
                .iter()
                .enumerate()
                .filter(|&(d, &v)| v < self.min[d] || v > self.max[d])
                .count();
            n_states += 1;
            n_out += out;
            n_flagged += (out > 0) as usize;
        }
        if n_states == 0 {
            return Ok(HullFractions {
                feature_fraction_outside: 0.0,
                state_fraction_outside: 0.0,
            });
        }
        Ok(HullFractions {
            feature_fraction_outside: n_out as f64 / (n_states * self.dim()) as f64,
            state_fraction_outside: n_flagged as f64 / n_states as f64,
        })
    }
}

/// Fits the hull on `train` and reports each named test set against it.
pub fn hull_diagnostic(train: &[Vec<f64>], tests: &[(&str, &[Vec<f64>])]) -> Result<HullReport> {
    let hull = Hull::fit(train.iter().map(Vec::as_slice))?;
    let mut splits = BTreeMap::new();
    for (name, states) in tests {
        splits.insert(name.to_string(), hull.fractions(states.iter().map(Vec::as_slice))?);
    }
    Ok(HullReport { hull, splits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub seq_acc: f64,
    pub seq_acc_be: f64,
    pub attn_loss: f64,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hull: Option<HullFractions>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn seq_acc_examples() {
        let target = t("000 110 100 <eos>");
        assert_eq!(seq_acc(&target, &target), 1.0);
        assert_eq!(seq_acc(&t("000 110 <eos>"), &target), 0.0);
        assert_eq!(seq_acc(&t("000 111 100 <eos>"), &target), 0.0);
        assert_eq!(seq_acc(&t("000 110 100"), &target), 0.0);
    }

    #[test]
    fn seq_acc_be_examples() {
        let target = t("000 110 100 <eos>");
        assert_eq!(seq_acc_be(&t("000 110 <eos>"), &target), 1.0);
        assert_eq!(seq_acc_be(&t("000 111 <eos>"), &target), 0.0);
        assert_eq!(seq_acc_be(&target, &target), 1.0);
        assert_eq!(seq_acc_be(&t("000 110 100 011 <eos>"), &target), 1.0);
        assert_eq!(seq_acc_be(&t("000 110 101 011"), &target), 0.0);
    }

    #[test]
    fn attn_loss_examples() {
        let target = t("000 110 <eos>");
        let one_hot = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(attn_loss(&one_hot, &[0, 1, 2], &target).unwrap(), 0.0);
        let shifted = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        assert_eq!(attn_loss(&shifted, &[0, 1, 2], &target).unwrap(), 1.0);
        let uniform = vec![vec![1.0 / 3.0; 3]];
        assert!((attn_loss(&uniform, &[0], &t("<eos>")).unwrap() - 0.0).abs() < 1e-12);
        let target = t("000 <eos>");
        let rows = vec![vec![1.0 / 3.0; 3], vec![1.0, 0.0, 0.0]];
        assert!((attn_loss(&rows, &[0, 2], &target).unwrap() - 1.0).abs() < 1e-12);
        assert!(attn_loss(&rows, &[0], &target).is_err());
    }

    #[test]
    fn hull_examples() {
        let train = vec![vec![0.0, 0.0], vec![1.0, 2.0]];
        let inside = vec![vec![0.5, 1.0]];
        let above = vec![vec![0.5, 3.0]];
        let r = hull_diagnostic(&train, &[("in", &inside), ("above", &above), ("train", &train)]).unwrap();
        assert_eq!(r.splits["in"].state_fraction_outside, 0.0);
        assert_eq!(r.splits["above"].state_fraction_outside, 1.0);
        assert_eq!(r.splits["above"].feature_fraction_outside, 0.5);
        assert_eq!(r.splits["train"].feature_fraction_outside, 0.0);
        assert!(hull_diagnostic(&train, &[("bad", &[vec![1.0]])]).is_err());
        assert!(hull_diagnostic(&[], &[]).is_err());
    }
}
