//! Reverse-mode automatic differentiation on a flat arena tape.
//!
//! The engine records every primitive as a node in creation order, which by
//! construction is a valid topological order: an operation can only consume
//! [`Var`]s that already exist. `backward` walks the arena once in reverse
//! and accumulates adjoints additively.

mod adam;
mod gradcheck;
mod tape;

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use adam::Adam;
pub use gradcheck::{grad_check_params, grad_check_program, relative_error, GradCheckReport};
pub use tape::{Activation, Mask, Tape, Var};

// ── tensors ──

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Vec<S>,
    trainable: bool,
}

impl<S: Scalar> Tensor<S> {
    /// Non-trainable tensor from explicit values.
    pub fn new(shape: &[usize], values: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, numel, values.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), values, grad: Vec::new(), trainable: false })
    }

    /// Trainable tensor: carries a zero-initialized gradient buffer.
    pub fn trainable(shape: &[usize], values: Vec<S>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.grad = vec![S::zero(); t.values.len()];
        t.trainable = true;
        Ok(t)
    }

    /// All-zero non-trainable tensor.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![S::zero(); numel], grad: Vec::new(), trainable: false }
    }

    /// Trainable tensor with entries drawn uniformly from `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::pre("tensor::uniform", format!("empty range [{lo}, {hi})")));
        }
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(|_| S::from_f64_lossy(rng.random_range(lo..hi))).collect();
        Self::trainable(shape, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn grad(&self) -> &[S] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [S] {
        &mut self.grad
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Reset the gradient buffer to zero. No-op for non-trainable tensors.
    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = S::zero();
        }
    }
}

// ── named parameter collection ──

/// Opaque handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, name-addressable collection of trainable tensors.
///
/// Iteration always follows insertion order so that optimizer sweeps and
/// checkpoint serialization are deterministic; the name index is only used
/// for lookups.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Register a trainable tensor under a unique name.
    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) -> Result<ParamId> {
        if !tensor.is_trainable() {
            return Err(Error::pre("param_set::insert", format!("tensor `{name}` is not trainable")));
        }
        if self.index.contains_key(name) {
            return Err(Error::contract("param_set::insert", format!("duplicate parameter `{name}`")));
        }
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Insertion-ordered iteration over `(name, tensor)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_shape_must_match_values() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn trainable_tensor_has_zero_grad_buffer() {
        let t = Tensor::<f64>::trainable(&[4], vec![1.0; 4]).unwrap();
        assert!(t.is_trainable());
        assert_eq!(t.grad(), &[0.0; 4]);
    }

    #[test]
    fn uniform_init_is_deterministic_and_in_range() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let ta = Tensor::<f64>::uniform(&[3, 3], -0.1, 0.1, &mut a).unwrap();
        let tb = Tensor::<f64>::uniform(&[3, 3], -0.1, 0.1, &mut b).unwrap();
        assert_eq!(ta.values(), tb.values());
        assert!(ta.values().iter().all(|v| (-0.1..0.1).contains(v)));
    }

    #[test]
    fn param_set_rejects_duplicates_and_preserves_order() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.insert("w_a", Tensor::trainable(&[1], vec![1.0]).unwrap()).unwrap();
        let b = ps.insert("w_b", Tensor::trainable(&[1], vec![2.0]).unwrap()).unwrap();
        assert!(ps.insert("w_a", Tensor::trainable(&[1], vec![3.0]).unwrap()).is_err());
        assert_eq!(ps.id("w_a"), Some(a));
        assert_eq!(ps.id("w_b"), Some(b));
        let names: Vec<&str> = ps.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["w_a", "w_b"]);
    }

    #[test]
    fn param_set_rejects_non_trainable() {
        let mut ps = ParamSet::<f64>::new();
        assert!(ps.insert("frozen", Tensor::new(&[1], vec![1.0]).unwrap()).is_err());
    }
}
