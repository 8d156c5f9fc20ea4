//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::scalar::Scalar;

/// Dense array with row-major layout. Rank is dynamic; the toolkit uses
/// ranks 0 (scalars) through 4 (convolution feature maps).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        let expect: usize = shape.iter().product();
        assert!(
            data.len() == expect,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Uniform draw in `[lo, hi)`. Consumes one `f64` per element so the
    /// stream is identical across scalar types.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| F::of(lo + (hi - lo) * rng.gen::<f64>()))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Xavier/Glorot uniform initialization with explicit fan counts.
    pub fn xavier_uniform<R: Rng>(
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(shape, -bound, bound, rng)
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> F {
        assert!(self.data.len() == 1, "item() on tensor of len {}", self.data.len());
        self.data[0]
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert!(self.rank() == 2, "rows() on rank-{} tensor", self.rank());
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert!(self.rank() == 2, "cols() on rank-{} tensor", self.rank());
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        let expect: usize = shape.iter().product();
        assert!(
            expect == self.data.len(),
            "reshape to {:?} incompatible with {} elements",
            shape,
            self.data.len()
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_checked_construction() {
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn bad_length_panics() {
        let _ = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    fn uniform_draws_match_across_dtypes() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<f32>::uniform(&[8], -1.0, 1.0, &mut r1);
        let b = Tensor::<f64>::uniform(&[8], -1.0, 1.0, &mut r2);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((*x as f64 - *y).abs() < 1e-7);
        }
    }
}
