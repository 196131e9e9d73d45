//! Loss terms, each returning its value and its gradient with respect to
//! the first argument.

use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cycle: f64,
    pub identity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cycle: 10.0, identity: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle >= 0.0 && self.identity >= 0.0) || !self.cycle.is_finite() || !self.identity.is_finite() {
            return Err(GanError::Config(format!("loss weights must be finite and ≥ 0, got {self:?}")));
        }
        Ok(())
    }
}

/// `mean((s − target)²)` over every patch score.
pub fn lsgan_loss<T: Scalar>(scores: &Tensor<T>, target: f64) -> (f64, Tensor<T>) {
    let n = scores.len() as f64;
    let t = T::from_f64(target);
    let loss = scores.data().iter().map(|&s| (s - t).to_f64().unwrap().powi(2)).sum::<f64>() / n;
    let k = T::from_f64(2.0 / n);
    (loss, scores.map(|s| k * (s - t)))
}

/// `mean(|x − y|)`; the subgradient at `x = y` is 0.
pub fn l1_loss<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    y.ensure_shape(x.shape())?;
    let n = x.len() as f64;
    let loss = x.data().iter().zip(y.data()).map(|(&a, &b)| (a - b).abs().to_f64().unwrap()).sum::<f64>() / n;
    let k = T::from_f64(1.0 / n);
    let mut g = x.clone();
    for (v, &b) in g.data_mut().iter_mut().zip(y.data()) {
        let d = *v - b;
        *v = if d > T::zero() { k } else if d < T::zero() { -k } else { T::zero() };
    }
    Ok((loss, g))
}

/// L1 between an image and its round-trip reconstruction.
pub fn cycle_loss<T: Scalar>(reconstructed: &Tensor<T>, original: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    l1_loss(reconstructed, original)
}

/// L1 between a target-domain image and the generator's output on it.
pub fn identity_loss<T: Scalar>(mapped: &Tensor<T>, original: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    l1_loss(mapped, original)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(lsgan_loss(&t(&[1.0, 1.0]), 1.0).0, 0.0);
        assert_eq!(lsgan_loss(&t(&[0.0, 0.0, 0.0]), 1.0).0, 1.0);
        let (l, g) = lsgan_loss(&t(&[0.5, 1.0]), 1.0);
        assert_eq!(l, 0.125);
        assert_eq!(g.data(), &[-0.5, 0.0]);
    }

    #[test]
    fn l1_examples() {
        let a = Tensor::<f64>::filled([1, 1, 4, 4], 0.0);
        assert_eq!(cycle_loss(&a, &a).unwrap().0, 0.0);
        assert_eq!(identity_loss(&a, &Tensor::filled([1, 1, 4, 4], 0.5)).unwrap().0, 0.5);
        assert!(l1_loss(&a, &Tensor::zeros([1, 1, 4, 3])).is_err());
    }

    #[test]
    fn weights_must_be_non_negative() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { cycle: -1.0, identity: 0.0 }.validate().is_err());
        assert!(LossWeights { cycle: f64::NAN, identity: 0.0 }.validate().is_err());
    }
}
