use std::collections::BTreeMap;

use rand::Rng;

use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor. Names are module paths such as
/// `encoder.gru.w_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F: Float> {
    pub name: String,
    pub tensor: Tensor<F>,
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F: Float = f32> {
    params: Vec<Parameter<F>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(),
        });
        Ok(id)
    }

    /// Matrix `[fan_in, fan_out]` drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_matrix<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(&[fan_in, fan_out], data)?)
    }

    pub fn insert_bias(&mut self, name: impl Into<String>, len: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(&[len]))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
