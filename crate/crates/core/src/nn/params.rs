use std::collections::HashMap;

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to one parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    /// Xavier-uniform `[fan_in, fan_out]` matrix.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::new(&[fan_in, fan_out], data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Reset every gradient slot to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.data_mut().fill(T::zero()),
                None => p.grad = Some(Tensor::zeros(p.value.shape())),
            }
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        let slot = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for (s, g) in slot.data_mut().iter_mut().zip(grad) {
            *s += *g;
        }
    }

    /// Scale all gradients, e.g. to average over a batch.
    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Convert every parameter to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(Tensor::cast),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
