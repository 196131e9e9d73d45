use proptest::prelude::*;

use nc2c_core::rng::rng_for;
use nc2c_gan::loss::{l1_loss, lsgan_loss};
use nc2c_gan::nets::{ConvLayerSpec, DiscriminatorSpec};
use nc2c_gan::optim::learning_rate;
use nc2c_gan::pool::ImagePool;
use nc2c_gan::{receptive_field, Tensor};

fn tensor(values: Vec<f64>) -> Tensor<f64> {
    let n = values.len();
    Tensor::from_vec([1, 1, 1, n], values).unwrap()
}

proptest! {
    #[test]
    fn schedule_is_bounded_and_non_increasing(lr in 1e-6f64..1e-2, epochs in 1usize..400, start_frac in 0.0f64..1.0) {
        let start = ((epochs as f64) * start_frac) as usize;
        let mut prev = f64::INFINITY;
        for e in 0..epochs {
            let r = learning_rate(lr, e, epochs, Some(start));
            prop_assert!(r >= 0.0 && r <= lr);
            prop_assert!(r <= prev);
            prev = r;
        }
        prop_assert!(learning_rate(lr, epochs - 1, epochs, Some(start)) > 0.0);
    }

    #[test]
    fn pool_never_exceeds_capacity_and_returns_known_images(capacity in 0usize..8, steps in 1usize..40, seed in any::<u64>()) {
        let mut pool = ImagePool::<f64>::new(capacity);
        let mut rng = rng_for(seed, &[]);
        for s in 0..steps {
            let out = pool.query(&Tensor::filled([1, 1, 2, 2], s as f64), &mut rng);
            prop_assert!(pool.images.len() <= capacity);
            let v = out.data()[0];
            prop_assert!(v.fract() == 0.0 && v >= 0.0 && v <= s as f64);
        }
    }

    #[test]
    fn losses_are_non_negative_and_zero_at_target(values in prop::collection::vec(-2.0f64..2.0, 1..32), target in -1.0f64..1.0) {
        let x = tensor(values.clone());
        prop_assert!(lsgan_loss(&x, target).0 >= 0.0);
        prop_assert_eq!(lsgan_loss(&tensor(vec![target; values.len()]), target).0, 0.0);
        let (l, _) = l1_loss(&x, &x).unwrap();
        prop_assert_eq!(l, 0.0);
    }

    #[test]
    fn receptive_field_grows_with_depth(kernels in prop::collection::vec((2usize..6, 1usize..3), 1..6)) {
        let layers: Vec<ConvLayerSpec> = kernels.iter().map(|&(kernel, stride)| ConvLayerSpec { kernel, stride, width: 1 }).collect();
        let mut prev = 1;
        for n in 1..=layers.len() {
            let rf = receptive_field(&DiscriminatorSpec { layers: layers[..n].to_vec() });
            prop_assert!(rf > prev);
            prev = rf;
        }
    }
}
