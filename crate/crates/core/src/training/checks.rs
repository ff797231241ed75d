//! Finite-difference gradient suites: every graph primitive, the location
//! attender on its own, and the end-to-end loss of every model kind.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, Attender, LocationAttender, LocationConfig, Memory};
use crate::error::Result;
use crate::numcore::rng::{substream, StreamRng};
use crate::numcore::{grad_check, grad_check_params, Graph, ParamStore, Tensor, Var};
use crate::seq2seq::{encode_examples, Mode, Model, ModelConfig};
use crate::tasks::{fixture_tables, generate_splits_with_tables, Variant};

pub const EPS: f64 = 1e-4;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub const PRIMITIVES: [&str; 26] = [
    "add", "sub", "mul", "div", "neg", "scale", "add_scalar", "one_minus", "tanh", "sigmoid", "relu",
    "leaky_relu", "exp", "soft_staircase", "matmul", "bmm", "concat", "narrow", "reshape", "sum", "mean",
    "sum_all", "softmax", "masked_softmax", "embedding", "cross_entropy",
];

fn random_shape(rng: &mut StreamRng) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

/// Values in `[-2, 2]` kept at least 0.05 away from 0 (the kink of the
/// piecewise-linear primitives).
fn random_tensor(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// The staircase jumps by `2 sigmoid(-10)` at every integer; finite
/// differences are only meaningful away from those points.
fn off_integers(mut t: Tensor<f64>) -> Tensor<f64> {
    for v in t.data_mut() {
        let frac = *v - v.round();
        if frac.abs() < 0.05 {
            *v = v.round() + 0.05f64.copysign(frac);
        }
    }
    t
}

/// Moves the evaluation point off the attender's non-differentiable
/// points: initialisation puts the step-count pre-activation on an integer
/// (a staircase jump) and the sigma pre-activation near the ReLU kink.
fn move_off_kinks(store: &mut ParamStore<f64>, loc: &LocationAttender) {
    store.get_mut(loc.rho_bias()).tensor.data_mut()[1] += 0.5;
    store.get_mut(loc.sigma_bias()).tensor.data_mut()[0] += 0.1;
}

/// Inputs and a scalar-valued graph exercising one primitive. The output
/// is contracted with fixed random weights so every entry matters.
fn primitive_case(name: &str, rng: &mut StreamRng) -> (Vec<Tensor<f64>>, Builder) {
    let shape = random_shape(rng);
    let weights = |rng: &mut StreamRng, shape: &[usize]| random_tensor(rng, shape);
    macro_rules! unary {
        ($body:expr) => {{
            let x = random_tensor(rng, &shape);
            let w = weights(rng, &shape);
            let f: Builder = Box::new(move |g, v| {
                let y = $body(g, v[0])?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![x], f)
        }};
    }
    let binary = |rng: &mut StreamRng, op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>, denom: bool| {
        // The second operand broadcasts along randomly chosen axes.
        let other: Vec<usize> = shape.iter().map(|&d| if rng.gen_bool(0.3) { 1 } else { d }).collect();
        let a = random_tensor(rng, &shape);
        let mut b = random_tensor(rng, &other);
        if denom {
            b.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.5 + v.abs() * 0.75));
        }
        let w = weights(rng, &shape);
        let f: Builder = Box::new(move |g, v| {
            let y = op(g, v[0], v[1])?;
            let w = g.constant(w.clone());
            let p = g.mul(y, w)?;
            Ok(g.sum_all(p))
        });
        (vec![a, b], f)
    };
    match name {
        "add" => binary(rng, Graph::add, false),
        "sub" => binary(rng, Graph::sub, false),
        "mul" => binary(rng, Graph::mul, false),
        "div" => binary(rng, Graph::div, true),
        "neg" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.neg(x))),
        "scale" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.scale(x, -1.7))),
        "add_scalar" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.add_scalar(x, 0.3))),
        "one_minus" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.one_minus(x))),
        "tanh" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.tanh(x))),
        "sigmoid" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.sigmoid(x))),
        "relu" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.relu(x))),
        "leaky_relu" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.leaky_relu(x, 0.01))),
        "exp" => unary!(|g: &mut Graph<f64>, x| Ok::<_, crate::Error>(g.exp(x))),
        "soft_staircase" => {
            let x = off_integers(random_tensor(rng, &shape));
            let w = weights(rng, &shape);
            let f: Builder = Box::new(move |g, v| {
                let y = g.soft_staircase(v[0]);
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![x], f)
        }
        "reshape" => {
            let n: usize = shape.iter().product();
            let x = random_tensor(rng, &shape);
            let w = weights(rng, &[n]);
            let f: Builder = Box::new(move |g, v| {
                let y = g.reshape(v[0], &[n])?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![x], f)
        }
        "sum" | "mean" | "softmax" => {
            let axis = rng.gen_range(0..shape.len());
            let mut out = shape.clone();
            if name != "softmax" {
                out[axis] = 1;
            }
            let x = random_tensor(rng, &shape);
            let w = weights(rng, &out);
            let name = name.to_string();
            let f: Builder = Box::new(move |g, v| {
                let y = match name.as_str() {
                    "sum" => g.sum(v[0], axis)?,
                    "mean" => g.mean(v[0], axis)?,
                    _ => g.softmax(v[0], axis)?,
                };
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![x], f)
        }
        "sum_all" => unary!(|g: &mut Graph<f64>, x| {
            let s = g.sum_all(x);
            g.mul(s, s)
        }),
        "matmul" | "bmm" => {
            let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let bsz = if name == "bmm" { rng.gen_range(1..=3) } else { 0 };
            let lead = |d: &[usize]| if bsz > 0 { [&[bsz][..], d].concat() } else { d.to_vec() };
            let a = random_tensor(rng, &lead(&[m, k]));
            let b = random_tensor(rng, &lead(&[k, n]));
            let w = weights(rng, &lead(&[m, n]));
            let f: Builder = Box::new(move |g, v| {
                let y = if bsz > 0 { g.bmm(v[0], v[1])? } else { g.matmul(v[0], v[1])? };
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![a, b], f)
        }
        "concat" => {
            let axis = rng.gen_range(0..shape.len());
            let mut other = shape.clone();
            other[axis] = rng.gen_range(1..=3);
            let mut out = shape.clone();
            out[axis] += other[axis];
            let a = random_tensor(rng, &shape);
            let b = random_tensor(rng, &other);
            let w = weights(rng, &out);
            let f: Builder = Box::new(move |g, v| {
                let y = g.concat(&[v[0], v[1]], axis)?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![a, b], f)
        }
        "narrow" => {
            let axis = rng.gen_range(0..shape.len());
            let start = rng.gen_range(0..shape[axis]);
            let len = rng.gen_range(1..=shape[axis] - start);
            let mut out = shape.clone();
            out[axis] = len;
            let x = random_tensor(rng, &shape);
            let w = weights(rng, &out);
            let f: Builder = Box::new(move |g, v| {
                let y = g.narrow(v[0], axis, start, len)?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![x], f)
        }
        "masked_softmax" => {
            let (b, s) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
            let lengths: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=s)).collect();
            let x = random_tensor(rng, &[b, s]);
            let w = weights(rng, &[b, s]);
            let f: Builder = Box::new(move |g, v| {
                let y = g.masked_softmax(v[0], &lengths)?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![x], f)
        }
        "embedding" => {
            let (rows, dim, n) = (rng.gen_range(1..=5), rng.gen_range(1..=4), rng.gen_range(1..=6));
            let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..rows)).collect();
            let table = random_tensor(rng, &[rows, dim]);
            let w = weights(rng, &[n, dim]);
            let f: Builder = Box::new(move |g, v| {
                let y = g.embedding(v[0], &ids)?;
                let w = g.constant(w.clone());
                let p = g.mul(y, w)?;
                Ok(g.sum_all(p))
            });
            (vec![table], f)
        }
        "cross_entropy" => {
            let (n, classes) = (rng.gen_range(1..=4), rng.gen_range(2..=5));
            let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let mut wts: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { 1.0 }).collect();
            wts[0] = 1.0;
            let logits = random_tensor(rng, &[n, classes]);
            let f: Builder = Box::new(move |g, v| g.cross_entropy(v[0], &targets, &wts));
            (vec![logits], f)
        }
        other => unreachable!("unknown primitive {other}"),
    }
}

/// Worst relative error of one primitive over `trials` random shapes.
pub fn check_primitive(name: &str, seed: u64, trials: usize) -> Result<CheckResult> {
    let mut rng = substream(seed, &format!("gradcheck.{name}"));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (inputs, f) = primitive_case(name, &mut rng);
        worst = worst.max(grad_check(&inputs, EPS, f)?);
    }
    Ok(CheckResult {
        name: format!("primitive/{name}"),
        max_rel_error: worst,
        tolerance: PRIMITIVE_TOLERANCE,
    })
}

/// Location attender with query dimension 8 over sources of length 4 and
/// 3, unrolled for three steps so the recurrent state is exercised.
pub fn check_location(seed: u64) -> Result<CheckResult> {
    let mut rng = substream(seed, "gradcheck.location");
    let mut store = ParamStore::<f64>::new();
    let config = LocationConfig {
        weighter_dim: 8,
        ..LocationConfig::default()
    };
    let loc = LocationAttender::new(&mut store, "loc", 8, config, &mut rng)?;
    for p in store.iter_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    move_off_kinks(&mut store, &loc);
    let queries: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut rng, &[2, 8])).collect();
    let w: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut rng, &[2, 4])).collect();
    let worst = grad_check_params(&store, EPS, |g, s| {
        let states = g.constant(Tensor::zeros(&[2, 4, 1]));
        let mem = Memory::new(g, states, &[4, 3])?;
        let mut vars = loc.init_vars(g, 2);
        let mut terms = Vec::new();
        for (q, w) in queries.iter().zip(&w) {
            let q = g.constant(q.clone());
            let out = loc.step(g, s, &mem, q, &mut vars)?;
            vars.record_mean(g, &mem, out.lambda)?;
            let w = g.constant(w.clone());
            let lw = g.mul(out.lambda, w)?;
            terms.push(g.sum_all(lw));
            let ms = g.mul(out.mu, out.sigma)?;
            terms.push(g.sum_all(ms));
        }
        let all = g.concat(&terms, 0)?;
        Ok(g.sum_all(all))
    })?;
    Ok(CheckResult {
        name: "location_attender".into(),
        max_rel_error: worst,
        tolerance: MODEL_TOLERANCE,
    })
}

/// Scaled-down model (embedding 4, hidden 8) of `kind`: cross-entropy of a
/// two-example batch with bottleneck dropout active under a fixed mask.
pub fn check_model(kind: AttentionKind, seed: u64) -> Result<CheckResult> {
    let mut config = ModelConfig::new(kind, seed);
    config.embedding_dim = 4;
    config.hidden_dim = 8;
    config.attention.location.weighter_dim = 4;
    let mut model = Model::<f64>::new(config)?;
    if let Attender::Location(loc) | Attender::Mix { location: loc, .. } = *model.attender() {
        move_off_kinks(&mut model.store, &loc);
    }
    let splits = generate_splits_with_tables(Variant::Standard, seed, fixture_tables(seed))?;
    let batch = [splits.train[100].clone(), splits.interpolation[7].clone()];
    let (src, tgt) = encode_examples(&batch)?;
    let worst = grad_check_params(&model.store, EPS, |g, s| {
        let m = model.with_store(s.clone());
        let fwd = m.teacher_forced(g, &src, &tgt, Mode::Train, &mut substream(seed, "gradcheck.dropout"))?;
        m.loss(g, &fwd, &tgt)
    })?;
    Ok(CheckResult {
        name: format!("model/{kind}"),
        max_rel_error: worst,
        tolerance: MODEL_TOLERANCE,
    })
}

/// Every check: primitives (`trials` random shapes each), the location
/// attender and all seven model kinds.
pub fn gradient_suite(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for name in PRIMITIVES {
        out.push(check_primitive(name, seed, trials)?);
    }
    out.push(check_location(seed)?);
    for kind in AttentionKind::ALL {
        out.push(check_model(kind, seed)?);
    }
    Ok(out)
}
