//! Minimal layer library with explicit backward passes.
//!
//! Layers do not keep activations; the networks built on top of them record
//! whatever their backward pass needs in a trace value.

mod adam;
mod conv;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use conv::{col2im_add, im2col, Conv2d, ConvTranspose2d, Grads};
pub use ops::{
    instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, max_pool2,
    max_pool2_backward, relu, relu_backward, tanh, tanh_backward, NormCache,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::tensor::Scalar;

/// A trainable parameter with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
            shape: shape.to_vec(),
        }
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut p.value {
            *v = T::lit(dist.sample(rng));
        }
        p
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns a list of parameters in a fixed order.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// SHA-256 over the little-endian `f64` image of every parameter value.
    fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for v in &p.value {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn flat_values(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    fn load_flat_values(&mut self, values: &[T]) -> crate::Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(crate::Error::ShapeMismatch(format!(
                "{} parameter values for a network with {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
