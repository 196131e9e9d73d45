//! Adaptive-moment optimiser and learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::layers::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self { beta1, beta2, eps: 1e-8, t: 0 }
    }

    /// One bias-corrected update of every parameter with learning rate `lr`.
    pub fn step<T: Scalar>(&mut self, params: Vec<&mut Param<T>>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let step = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(self.eps);
        for p in params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * g;
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * g * g;
                p.value[i] = p.value[i] - step * p.m[i] / ((p.v[i] * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// Constant `lr` until `decay_start`, then linear decay that stays positive
/// through the final epoch.
pub fn learning_rate(lr: f64, epoch: usize, epochs: usize, decay_start: Option<usize>) -> f64 {
    match decay_start {
        Some(start) if epoch >= start && epochs > start => {
            let done = (epoch - start + 1) as f64;
            lr * (1.0 - done / (epochs - start + 1) as f64)
        }
        _ => lr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first step ±lr·g/|g|
        let mut p = Param::new(vec![1.0f64, -2.0]);
        p.grad = vec![0.3, -4.0];
        let mut adam = Adam::new(0.5, 0.999);
        adam.step(vec![&mut p], 0.1);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_bit_exact() {
        let mut p = Param::new(vec![0.123f32, -7.5]);
        p.grad = vec![1e3, -1e-3];
        let before = p.value.clone();
        Adam::new(0.5, 0.999).step(vec![&mut p], 0.0);
        assert_eq!(p.value, before);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::new(vec![5.0f64]);
        let mut adam = Adam::new(0.9, 0.999);
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.5);
            adam.step(vec![&mut p], 0.05);
        }
        assert!((p.value[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn schedule_is_flat_then_linear() {
        assert_eq!(learning_rate(2e-4, 99, 200, Some(100)), 2e-4);
        assert!((learning_rate(2e-4, 100, 200, Some(100)) - 2e-4 * (1.0 - 1.0 / 101.0)).abs() < 1e-18);
        let last = learning_rate(2e-4, 199, 200, Some(100));
        assert!(last > 0.0 && last < 1e-5);
        assert_eq!(learning_rate(2e-4, 199, 200, None), 2e-4);
    }
}
