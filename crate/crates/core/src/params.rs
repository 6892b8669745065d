//! Named learnable tensors and their initialization.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of parameter leaves. Order is registration order and
/// is what checkpoints and optimizers iterate over.
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, data: Vec<T>, shape: &[usize]) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = self.tensors.len();
        self.tensors.push(Tensor::parameter(data, shape)?);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Replaces a parameter's values with a fresh leaf of the same shape.
    pub fn set(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let shape = self.tensors[id.0].shape().to_vec();
        self.tensors[id.0] = Tensor::parameter(data, &shape)?;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))?;
        self.set(id, data)
    }

    /// Installs caller-provided tensors (one per parameter, in order).
    /// Used by gradient checks to substitute perturbed values.
    pub fn replace_all(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "replace_all: {} tensors for {} parameters",
                tensors.len(),
                self.tensors.len()
            )));
        }
        for (slot, t) in self.tensors.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::shape("replace_all", slot.shape(), t.shape()));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.iter().for_each(Tensor::zero_grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal(0, std²) truncated to ±2 std.
    TruncNormal(f64),
    Zeros,
    Ones,
}

impl Init {
    pub const DEFAULT_WEIGHT: Init = Init::TruncNormal(0.02);

    fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::TruncNormal(std) => (0..n)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect(),
        }
    }
}

/// Registers parameters while a model is being constructed.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<ParamId> {
        let n = shape.iter().product();
        let values = init.sample(n, self.rng);
        self.store
            .insert(name, values.into_iter().map(T::from_f64).collect(), shape)
    }

    /// Uniform draw for test fixtures that want O(1) parameters.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], lo: f64, hi: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let values: Vec<T> = (0..n).map(|_| T::from_f64(self.rng.random_range(lo..hi))).collect();
        self.store.insert(name, values, shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn truncated_normal_is_bounded_and_seeded() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(7, Stream::Init);
        let id = ParamBuilder::new(&mut store, &mut rng)
            .add("w", &[1000], Init::TruncNormal(0.02))
            .unwrap();
        let w = store.get(id).to_vec();
        assert!(w.iter().all(|v| v.abs() <= 0.04));

        let mut again = ParamStore::<f64>::new();
        let mut rng = stream(7, Stream::Init);
        ParamBuilder::new(&mut again, &mut rng)
            .add("w", &[1000], Init::TruncNormal(0.02))
            .unwrap();
        assert_eq!(again.by_name("w").unwrap().to_vec(), w);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a", vec![0.0], &[1]).unwrap();
        assert!(store.insert("a", vec![0.0], &[1]).is_err());
    }

    #[test]
    fn set_resets_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("a", vec![1.0, 2.0], &[2]).unwrap();
        store.get(id).sum().backward().unwrap();
        assert!(store.get(id).grad().is_some());
        store.set(id, vec![3.0, 4.0]).unwrap();
        assert!(store.get(id).grad().is_none());
        assert_eq!(store.numel(), 2);
    }
}
