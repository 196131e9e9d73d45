//! Dense `[batch, channels, height, width]` tensors.

use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(GanError::Shape { expected: vec![len], found: vec![data.len()] });
        }
        Ok(Self { shape, data })
    }

    /// A single-channel image `[1, 1, h, w]` from row-major values.
    pub fn image(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec([1, 1, h, w], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Number of elements in one `[c, h, w]` sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    /// Samples `i` of this batch as a new batch of one.
    pub fn select(&self, i: usize) -> Self {
        let [_, c, h, w] = self.shape;
        Self { shape: [1, c, h, w], data: self.sample(i).to_vec() }
    }

    /// Concatenates batches along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| GanError::Config("cannot stack zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(GanError::Shape { expected: first.shape.to_vec(), found: t.shape.to_vec() });
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape: [n, c, h, w], data })
    }

    pub fn ensure_shape(&self, expected: [usize; 4]) -> Result<()> {
        if self.shape != expected {
            return Err(GanError::Shape { expected: expected.to_vec(), found: self.shape.to_vec() });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(mut self, s: T) -> Self {
        self.data.iter_mut().for_each(|x| *x = *x * s);
        self
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "tensor add shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a = *a + b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|x| U::from_f64(x.to_f64().unwrap())).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_and_select_round_trip() {
        let a = Tensor::<f32>::image(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = a.map(|x| -x);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), [2, 1, 2, 2]);
        assert_eq!(s.select(1), b);
        assert!(Tensor::stack(&[&a, &Tensor::zeros([1, 1, 3, 2])]).is_err());
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
