use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor2>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor2) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Adds a tensor drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor2::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor2> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Zero tensors with the same layout, for gradient accumulation.
    pub fn zeros_like(&self) -> Grads {
        Grads {
            tensors: self.tensors.iter().map(|t| Tensor2::zeros(t.rows, t.cols)).collect(),
        }
    }
}

/// Gradients aligned with a `ParamStore`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor2>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale_assign(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor2::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_init_is_bounded_and_seeded() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let mut ra = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut rb = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        a.add_uniform("w", 8, 4, 16, &mut ra).unwrap();
        b.add_uniform("w", 8, 4, 16, &mut rb).unwrap();
        assert_eq!(a, b);
        assert!(a.get(ParamId(0)).data.iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor2::zeros(1, 1)).unwrap();
        assert!(s.add("w", Tensor2::zeros(1, 1)).is_err());
        assert_eq!(s.id("w"), Some(ParamId(0)));
    }
}
