//! History of generated images shown to the discriminators.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool<T> {
    pub capacity: usize,
    pub images: Vec<Tensor<T>>,
}

impl<T: Scalar> ImagePool<T> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, images: Vec::new() }
    }

    /// Per sample: while filling, store and return it; once full, with
    /// probability ½ return a stored image and keep the new one in its place,
    /// otherwise return the new one. Capacity 0 passes the batch through.
    pub fn query<R: Rng>(&mut self, batch: &Tensor<T>, rng: &mut R) -> Tensor<T> {
        if self.capacity == 0 {
            return batch.clone();
        }
        let out: Vec<Tensor<T>> = (0..batch.shape()[0])
            .map(|i| {
                let img = batch.select(i);
                if self.images.len() < self.capacity {
                    self.images.push(img.clone());
                    img
                } else if rng.random_bool(0.5) {
                    let j = rng.random_range(0..self.capacity);
                    std::mem::replace(&mut self.images[j], img)
                } else {
                    img
                }
            })
            .collect();
        Tensor::stack(&out.iter().collect::<Vec<_>>()).expect("pool images share the batch shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nc2c_core::rng::rng_for;

    #[test]
    fn fills_then_mixes_history() {
        let mut pool = ImagePool::<f32>::new(3);
        let mut rng = rng_for(0, &[]);
        let img = |v: f32| Tensor::filled([1, 1, 2, 2], v);
        for v in 0..3 {
            assert_eq!(pool.query(&img(v as f32), &mut rng), img(v as f32));
        }
        let mut old = 0;
        for v in 3..100 {
            let out = pool.query(&img(v as f32), &mut rng);
            old += (out.data()[0] != v as f32) as usize;
            assert_eq!(pool.images.len(), 3);
        }
        assert!((25..75).contains(&old), "{old}");
        let mut pass = ImagePool::<f32>::new(0);
        assert_eq!(pass.query(&img(9.0), &mut rng), img(9.0));
    }
}
