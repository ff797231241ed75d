//! Gaussian location attention over relative source positions.
//!
//! Each step a small recurrent "weighter" reads the (resized) decoder query
//! and emits a standard deviation `sigma` and three weights `rho`. The mean
//! of the Gaussian is the leaky-clamped combination `rho . b` of three
//! building blocks: the previous mean attended position, the step size
//! `1 / (n_s - 1)` and a constant bias `1`. The attention over source
//! positions is the Gaussian evaluated at `r_s = s / (n_s - 1)` and
//! normalized to sum to one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionWeights, Memory};
use crate::error::{Error, Result};
use crate::numcore::{Float, Graph, GruParams, ParamId, ParamStore, Tensor, Var};

pub const MIN_SIGMA: f64 = 0.27;
pub const CLAMP_SLOPE: f64 = 0.01;
const STAIR_SHARPNESS: f64 = 20.0;

/// `floor(x) + sigmoid(20 (x - 0.5 - floor(x)))`.
pub fn soft_staircase(x: f64) -> f64 {
    let fl = x.floor();
    fl + 1.0 / (1.0 + (-STAIR_SHARPNESS * (x - 0.5 - fl)).exp())
}

fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        CLAMP_SLOPE * x
    }
}

/// `1 - lrelu(1 - lrelu(x))`: identity on `[0, 1]`, slope 0.01 outside.
pub fn leaky_clamp(x: f64) -> f64 {
    1.0 - leaky_relu(1.0 - leaky_relu(x))
}

pub(crate) fn leaky_clamp_var<F: Float>(g: &mut Graph<F>, x: Var) -> Var {
    let slope = F::from_f64(CLAMP_SLOPE);
    let inner = g.leaky_relu(x, slope);
    let flipped = g.one_minus(inner);
    let outer = g.leaky_relu(flipped, slope);
    g.one_minus(outer)
}

/// Normalized Gaussian weights `[B, S]` with per-row mean and std `[B, 1]`.
///
/// Normalizing the PDF over positions cancels its `1 / sqrt(2 pi sigma^2)`
/// factor, so the weights are a softmax of `-(r_s - mu)^2 / (2 sigma^2)`.
pub(crate) fn gaussian_weights_var<F: Float>(
    g: &mut Graph<F>,
    mem: &Memory,
    mu: Var,
    sigma: Var,
) -> Result<Var> {
    let diff = g.sub(mem.rel_pos, mu)?;
    let sq = g.mul(diff, diff)?;
    let var = g.mul(sigma, sigma)?;
    let two_var = g.scale(var, F::from_f64(2.0));
    let z = g.div(sq, two_var)?;
    let logits = g.neg(z);
    g.masked_softmax(logits, &mem.lengths)
}

/// Gaussian attention for an explicit mean and standard deviation.
pub fn gaussian_attention(mu: f64, sigma: f64, n_s: usize) -> Result<AttentionWeights> {
    if n_s == 0 {
        return Err(Error::invalid("location attention over an empty source"));
    }
    if sigma <= 0.0 || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::invalid(format!("invalid gaussian mu={mu} sigma={sigma}")));
    }
    let mut g = Graph::<f64>::new();
    let states = g.constant(Tensor::zeros(&[1, n_s, 1]));
    let mem = Memory::new(&mut g, states, &[n_s])?;
    let mu = g.constant(Tensor::new(&[1, 1], vec![mu])?);
    let sigma = g.constant(Tensor::new(&[1, 1], vec![sigma])?);
    let w = gaussian_weights_var(&mut g, &mem, mu, sigma)?;
    AttentionWeights::new(g.value(w).data().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationConfig {
    /// Width of the resized query and of the weighter GRU state.
    pub weighter_dim: usize,
    pub min_sigma: f64,
    /// Initial bias of the (previous mean gate, step count, bias gate)
    /// pre-activations. The default starts the attender as a diagonal
    /// walker: `mu_t ~ mean_{t-1} + 1/(n_s - 1)`.
    #[serde(default = "default_rho_bias")]
    pub rho_bias_init: [f64; 3],
}

impl Default for LocationConfig {
    fn default() -> Self {
        LocationConfig {
            weighter_dim: 64,
            min_sigma: MIN_SIGMA,
            rho_bias_init: DEFAULT_RHO_BIAS,
        }
    }
}

pub const DEFAULT_RHO_BIAS: [f64; 3] = [3.0, 1.0, -3.0];

fn default_rho_bias() -> [f64; 3] {
    DEFAULT_RHO_BIAS
}

/// Values describing one location-attention step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationDiagnostics {
    pub mu: f64,
    pub sigma: f64,
    /// Weights of (previous mean gate, step count, bias gate).
    pub rho: [f64; 3],
    /// (previous mean position, 1 / (n_s - 1), 1).
    pub building_blocks: [f64; 3],
}

/// Recurrent state of the location attender for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationState {
    pub omega: Vec<f64>,
    /// Mean attended relative position of the previous step, in `[0, 1]`.
    pub prev_mean_pos: f64,
}

impl LocationState {
    /// State at the start of a target sequence.
    pub fn reset(weighter_dim: usize) -> Self {
        LocationState {
            omega: vec![0.0; weighter_dim],
            prev_mean_pos: 0.0,
        }
    }
}

/// Batched location state living on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LocationVars {
    pub omega: Var,
    pub prev_mean_pos: Var,
}

impl LocationVars {
    pub fn zeros<F: Float>(g: &mut Graph<F>, batch: usize, weighter_dim: usize) -> Self {
        LocationVars {
            omega: g.constant(Tensor::zeros(&[batch, weighter_dim])),
            prev_mean_pos: g.constant(Tensor::zeros(&[batch, 1])),
        }
    }

    /// Stores the mean relative position `sum_s alpha_s r_s` of the final
    /// attention of this step.
    pub fn record_mean<F: Float>(&mut self, g: &mut Graph<F>, mem: &Memory, alpha: Var) -> Result<()> {
        let weighted = g.mul(alpha, mem.rel_pos)?;
        self.prev_mean_pos = g.sum(weighted, 1)?;
        Ok(())
    }
}

/// Graph outputs of one location step, all batched.
#[derive(Debug, Clone, Copy)]
pub struct LocationStep {
    pub lambda: Var,
    pub mu: Var,
    pub sigma: Var,
    pub rho: Var,
    pub blocks: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LocationAttender {
    pub config: LocationConfig,
    pub query_dim: usize,
    resize: ParamId,
    weighter: GruParams,
    sigma_w: ParamId,
    sigma_b: ParamId,
    rho_w: ParamId,
    rho_b: ParamId,
}

impl LocationAttender {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        query_dim: usize,
        config: LocationConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let w = config.weighter_dim;
        Ok(LocationAttender {
            config,
            query_dim,
            resize: store.insert_matrix(format!("{prefix}.resize"), query_dim, w, rng)?,
            weighter: GruParams::new(store, &format!("{prefix}.weighter"), w, w, rng)?,
            sigma_w: store.insert_matrix(format!("{prefix}.sigma.w"), w, 1, rng)?,
            sigma_b: store.insert_bias(format!("{prefix}.sigma.b"), 1)?,
            rho_w: store.insert_matrix(format!("{prefix}.rho.w"), w, 3, rng)?,
            rho_b: store.insert(
                format!("{prefix}.rho.b"),
                Tensor::new(&[3], config.rho_bias_init.iter().map(|&v| F::from_f64(v)).collect())?,
            )?,
        })
    }

    pub fn rho_bias(&self) -> ParamId {
        self.rho_b
    }

    pub fn rho_weight(&self) -> ParamId {
        self.rho_w
    }

    pub fn sigma_bias(&self) -> ParamId {
        self.sigma_b
    }

    pub fn sigma_weight(&self) -> ParamId {
        self.sigma_w
    }

    pub fn init_vars<F: Float>(&self, g: &mut Graph<F>, batch: usize) -> LocationVars {
        LocationVars::zeros(g, batch, self.config.weighter_dim)
    }

    /// One attention step. `state.omega` is advanced; the caller updates
    /// `state.prev_mean_pos` once the final attention of the step is known.
    pub fn step<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        query: Var,
        state: &mut LocationVars,
    ) -> Result<LocationStep> {
        let resize = g.param(store, self.resize);
        let resized = g.matmul(query, resize)?;
        let resized = g.relu(resized);
        state.omega = self.weighter.step(g, store, resized, state.omega)?;
        let omega = state.omega;

        let sigma_w = g.param(store, self.sigma_w);
        let sigma_b = g.param(store, self.sigma_b);
        let raw = g.matmul(omega, sigma_w)?;
        let raw = g.add(raw, sigma_b)?;
        let raw = g.relu(raw);
        let widened = g.add_scalar(raw, F::from_f64(self.config.min_sigma));
        let sigma = g.mul(widened, mem.inv_len)?;

        let rho_w = g.param(store, self.rho_w);
        let rho_b = g.param(store, self.rho_b);
        let pre = g.matmul(omega, rho_w)?;
        let pre = g.add(pre, rho_b)?;
        let mean_gate = g.narrow(pre, 1, 0, 1)?;
        let mean_gate = g.sigmoid(mean_gate);
        let steps = g.narrow(pre, 1, 1, 1)?;
        let steps = g.soft_staircase(steps);
        let bias_gate = g.narrow(pre, 1, 2, 1)?;
        let bias_gate = g.sigmoid(bias_gate);
        let rho = g.concat(&[mean_gate, steps, bias_gate], 1)?;

        let blocks = g.concat(&[state.prev_mean_pos, mem.step_block, mem.ones], 1)?;
        let terms = g.mul(rho, blocks)?;
        let mu = g.sum(terms, 1)?;
        let mu = leaky_clamp_var(g, mu);

        let lambda = gaussian_weights_var(g, mem, mu, sigma)?;
        Ok(LocationStep {
            lambda,
            mu,
            sigma,
            rho,
            blocks,
        })
    }

    /// Single-sequence step: returns the location attention, the advanced
    /// state (its mean position taken from the returned attention) and the
    /// step diagnostics.
    pub fn attend<F: Float>(
        &self,
        store: &ParamStore<F>,
        query: &[F],
        n_s: usize,
        state: &LocationState,
    ) -> Result<(AttentionWeights, LocationState, LocationDiagnostics)> {
        if n_s == 0 {
            return Err(Error::invalid("location attention over an empty source"));
        }
        if query.len() != self.query_dim || state.omega.len() != self.config.weighter_dim {
            return Err(Error::ShapeMismatch {
                op: "location_attend",
                lhs: vec![query.len(), state.omega.len()],
                rhs: vec![self.query_dim, self.config.weighter_dim],
            });
        }
        let mut g = Graph::<F>::new();
        let states = g.constant(Tensor::zeros(&[1, n_s, 1]));
        let mem = Memory::new(&mut g, states, &[n_s])?;
        let q = g.constant(Tensor::new(&[1, self.query_dim], query.to_vec())?);
        let omega = state.omega.iter().map(|&v| F::from_f64(v)).collect();
        let mut vars = LocationVars {
            omega: g.constant(Tensor::new(&[1, self.config.weighter_dim], omega)?),
            prev_mean_pos: g.constant(Tensor::scalar(F::from_f64(state.prev_mean_pos)).reshape(&[1, 1])?),
        };
        let out = self.step(&mut g, store, &mem, q, &mut vars)?;
        vars.record_mean(&mut g, &mem, out.lambda)?;
        let vals = |v: Var| g.value(v).to_f64_vec();
        let lambda = AttentionWeights::new(vals(out.lambda))?;
        let rho = vals(out.rho);
        let blocks = vals(out.blocks);
        let diag = LocationDiagnostics {
            mu: vals(out.mu)[0],
            sigma: vals(out.sigma)[0],
            rho: [rho[0], rho[1], rho[2]],
            building_blocks: [blocks[0], blocks[1], blocks[2]],
        };
        let next = LocationState {
            omega: vals(vars.omega),
            prev_mean_pos: vals(vars.prev_mean_pos)[0],
        };
        Ok((lambda, next, diag))
    }
}
