//! Dense row-major tensor with copy-on-write storage. Network activations
//! use the layout `[batch, channel, x, y, z]`; matrices are `[rows, cols]`
//! and per-channel vectors are rank 1. Cloning is cheap (shared `Arc`), and
//! mutation in place only copies when the buffer is shared.

use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {shape:?} needs {n} elements, got {}", data.len());
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![F::zero(); n]) }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; n]) }
    }

    pub fn scalar(value: F) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![value]) }
    }

    /// Gaussian-filled tensor, values drawn in f64 so the stream is identical
    /// for every scalar width.
    pub fn randn<R: Rng>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                F::of(mean + std * z)
            })
            .collect();
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        if Arc::strong_count(&self.data) != 1 {
            self.data = Arc::new(self.data.as_ref().clone());
        }
        Arc::get_mut(&mut self.data).expect("unique after copy-on-write").as_mut_slice()
    }

    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same storage, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.numel(), "reshape {:?} -> {shape:?}", self.shape);
        Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
            ),
        }
    }

    pub fn add_in_place(&mut self, other: &Tensor<F>) {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        let dst = self.data_mut();
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += *s;
        }
    }

    pub fn scale_in_place(&mut self, k: F) {
        for d in self.data_mut() {
            *d *= k;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &v| m.max(v.abs()))
    }

    /// Cast between scalar widths through f64.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| G::of(v.as_f64())).collect()),
        }
    }
}

impl<F: Scalar> PartialEq for Tensor<F> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
