use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: T) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn to_named(&self) -> Vec<NamedTensor<T>> {
        self.iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    pub fn from_named(named: Vec<NamedTensor<T>>) -> Result<Self> {
        let mut store = Self::new();
        for nt in named {
            let t = Tensor::new(nt.shape, nt.data)
                .map_err(|e| Error::Serde(format!("parameter `{}`: {e}", nt.name)))?;
            store.add(nt.name, t);
        }
        Ok(store)
    }

    /// Copy values from `other`, requiring identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Serde("checkpoint parameter names do not match the architecture".into()));
        }
        for ((name, dst), src) in self.names.iter().zip(&mut self.values).zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape(format!("load `{name}`"), dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}
