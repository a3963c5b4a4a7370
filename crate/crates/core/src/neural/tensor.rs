use std::fmt;

use crate::scalar::Real;

use super::NeuralError;

/// Row-major matrix. Scalars are `1 x 1`, row vectors `1 x n`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 2],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: [usize; 2], data: Vec<T>) -> Result<Self, NeuralError> {
        if data.len() != shape[0] * shape[1] {
            return Err(NeuralError::ShapeMismatch {
                op: "tensor",
                detail: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self { shape, data: vec![T::zero(); shape[0] * shape[1]] }
    }

    pub fn full(shape: [usize; 2], value: T) -> Self {
        Self { shape, data: vec![value; shape[0] * shape[1]] }
    }

    pub fn scalar(x: T) -> Self {
        Self { shape: [1, 1], data: vec![x] }
    }

    /// `n x 1` column.
    pub fn column(data: Vec<T>) -> Self {
        Self { shape: [data.len(), 1], data }
    }

    /// `1 x n` row.
    pub fn row(data: Vec<T>) -> Self {
        Self { shape: [1, data.len()], data }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn reshaped(mut self, shape: [usize; 2]) -> Self {
        debug_assert_eq!(shape[0] * shape[1], self.data.len());
        self.shape = shape;
        self
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

/// `c = a * b` (`trans_a`/`trans_b` read the operands transposed), added
/// into `c` when `accumulate` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_into<T: Real>(
    a: &[T],
    a_shape: [usize; 2],
    trans_a: bool,
    b: &[T],
    b_shape: [usize; 2],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (m, k) = if trans_a { (a_shape[1], a_shape[0]) } else { (a_shape[0], a_shape[1]) };
    let n = if trans_b { b_shape[0] } else { b_shape[1] };
    let (rsa, csa) = if trans_a { (1, a_shape[1] as isize) } else { (a_shape[1] as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b_shape[1] as isize) } else { (b_shape[1] as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}
