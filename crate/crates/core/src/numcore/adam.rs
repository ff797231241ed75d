use serde::{Deserialize, Serialize};

use super::{Float, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Debug, Clone)]
pub struct AdamState<F: Float = f32> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Float> AdamState<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Vec<F>> {
            store
                .iter()
                .map(|p| vec![F::zero(); p.tensor.numel()])
                .collect()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam update using the gradients held in
    /// `store`. A non-finite gradient aborts before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match parameter store"));
        }
        for p in store.iter() {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
        let (one_b1, one_b2) = (F::from_f64(1.0 - c.beta1), F::from_f64(1.0 - c.beta2));
        let step_size = F::from_f64(c.lr / bc1);
        let inv_sqrt_bc2 = F::from_f64(1.0 / bc2.sqrt());
        let eps = F::from_f64(c.epsilon);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.tensor.grad().map(<[F]>::to_vec) else {
                continue;
            };
            for (k, value) in p.tensor.data_mut().iter_mut().enumerate() {
                let gk = grad[k];
                m[k] = b1 * m[k] + one_b1 * gk;
                v[k] = b2 * v[k] + one_b2 * gk * gk;
                let denom = v[k].sqrt() * inv_sqrt_bc2 + eps;
                *value -= step_size * m[k] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn scalar_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(value)).unwrap();
        store.get_mut(id).tensor.accumulate_grad(&[grad]);
        store
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = scalar_store(0.25, 0.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.by_name("w").unwrap().tensor.data(), &[0.25]);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0, 1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store).unwrap();
        let delta = store.by_name("w").unwrap().tensor.data()[0];
        assert!((delta + 1e-3).abs() < 1e-6, "{delta}");
    }

    #[test]
    fn nan_gradient_aborts_step() {
        let mut store = scalar_store(1.0, f64::NAN);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        assert!(matches!(adam.step(&mut store), Err(Error::NonFiniteGradient(_))));
        assert_eq!(store.by_name("w").unwrap().tensor.data(), &[1.0]);
        assert_eq!(adam.steps(), 0);
    }
}
