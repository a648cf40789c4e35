//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain value with an optional gradient slot. Differentiable
//! computation happens on a [`Graph`]: tensors enter as leaves, every op
//! records itself on the tape, and [`Graph::backward`] walks the tape once in
//! reverse. Feature maps use axis order `(H, W, C)`, optionally with leading
//! batch axes.

mod graph;
mod kernels;
mod optim;

pub use graph::{Graph, Var};
pub use optim::{adam_step, AdamConfig, AdamState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Initialisation recipe for [`Tensor::create`].
#[derive(Clone, Debug)]
pub enum Init<T> {
    Zeros,
    Constant(T),
    /// Independent uniform draws in `[lo, hi)` from a seeded ChaCha stream.
    Uniform { lo: T, hi: T, seed: u64 },
    FromValues(Vec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("tensor needs at least one axis"));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(format!("extent of axis {axis} is zero in {shape:?}")));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn create(shape: &[usize], init: Init<T>) -> Result<Self> {
        check_extents(shape)?;
        let n = numel(shape);
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(v) => vec![v; n],
            Init::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(Error::config(format!("uniform range [{lo}, {hi}) is empty")));
                }
                let (lo, hi) = (lo.as_f64(), hi.as_f64());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| T::of(rng.random_range(lo..hi))).collect()
            }
            Init::FromValues(values) => {
                if values.len() != n {
                    return Err(Error::shape(format!(
                        "{} values do not fill shape {shape:?} ({n} elements)",
                        values.len()
                    )));
                }
                values
            }
        };
        Ok(Self { shape: shape.to_vec(), data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn constant(shape: &[usize], value: T) -> Result<Self> {
        Self::create(shape, Init::Constant(value))
    }

    pub fn uniform(shape: &[usize], lo: T, hi: T, seed: u64) -> Result<Self> {
        Self::create(shape, Init::Uniform { lo, hi, seed })
    }

    pub fn from_values(shape: &[usize], values: Vec<T>) -> Result<Self> {
        Self::create(shape, Init::FromValues(values))
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value], grad: None, requires_grad: false }
    }

    /// Identity matrix of size `n × n`.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Installs a gradient buffer; it must match the data length.
    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds into the gradient slot, creating it if absent.
    pub fn accumulate_grad(&mut self, grad: &[T]) -> Result<()> {
        match &mut self.grad {
            Some(g) if g.len() == grad.len() => {
                g.iter_mut().zip(grad).for_each(|(a, &b)| *a += b);
                Ok(())
            }
            _ => self.set_grad(grad.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut offset = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
            offset = offset * e + i;
        }
        self.data[offset]
    }

    /// Same data under a new shape with equal element count. Drops the gradient.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_extents(shape)?;
        if numel(shape) != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
            grad: None,
            requires_grad: self.requires_grad,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Converts to another scalar type element by element.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
            requires_grad: self.requires_grad,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data, grad: None, requires_grad: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor::<f64>::zeros(&[2, 2]).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::constant(&[3], 1.5).unwrap();
        assert_eq!(c.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn uniform_is_reproducible_bitwise() {
        let a = Tensor::<f64>::uniform(&[4], -1.0, 1.0, 7).unwrap();
        let b = Tensor::<f64>::uniform(&[4], -1.0, 1.0, 7).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
        let c = Tensor::<f64>::uniform(&[4], -1.0, 1.0, 8).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn zero_extent_is_a_shape_error() {
        assert!(matches!(Tensor::<f64>::zeros(&[2, 0]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::<f64>::zeros(&[]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::from_values(&[2], vec![1.0f64]), Err(Error::Shape(_))));
    }

    #[test]
    fn requires_grad_is_settable() {
        let t = Tensor::<f32>::zeros(&[1]).unwrap().with_requires_grad(true);
        assert!(t.requires_grad());
    }

    #[test]
    fn grad_slot_must_match_shape() {
        let mut t = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert!(t.set_grad(vec![0.0; 5]).is_err());
        t.accumulate_grad(&[1.0; 6]).unwrap();
        t.accumulate_grad(&[1.0; 6]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0; 6]);
    }
}
