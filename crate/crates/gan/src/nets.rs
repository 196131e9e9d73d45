//! Generator and discriminator topologies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};
use crate::layers::{Conv2d, Layer, Sequential};
use crate::scalar::Scalar;

/// Stride-2 stages on each side of the residual trunk.
pub const DOWNSAMPLING_STAGES: usize = 2;
/// Receptive field of the patch discriminator's output units.
pub const PATCH_SIZE: usize = 70;
pub const LEAKY_SLOPE: f64 = 0.2;

/// ResNet-style encoder / residual trunk / decoder for one-channel images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub base_width: usize,
    pub residual_blocks: usize,
}

impl GeneratorSpec {
    /// Desk scale (≤ 64×64 images).
    pub fn desk() -> Self {
        Self { base_width: 8, residual_blocks: 3 }
    }

    /// Full scale (256×256 images).
    pub fn full() -> Self {
        Self { base_width: 32, residual_blocks: 6 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(GanError::Config("generator base width must be positive".into()));
        }
        Ok(())
    }

    /// Input sides must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << DOWNSAMPLING_STAGES
    }

    /// `c7 → (c3 s2)×2 → residual blocks → (up ×2, c3)×2 → c7 → tanh`, with
    /// instance norm and ReLU after every inner convolution.
    pub fn build<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<Sequential<T>> {
        self.validate()?;
        let w = self.base_width;
        let mut layers = Vec::new();
        let block = |layers: &mut Vec<Layer<T>>, conv: Conv2d<T>| {
            layers.extend([Layer::Conv(conv), Layer::InstanceNorm, Layer::Relu]);
        };
        block(&mut layers, Conv2d::new(1, w, 7, 1, 3, false, rng));
        let mut width = w;
        for _ in 0..DOWNSAMPLING_STAGES {
            block(&mut layers, Conv2d::new(width, 2 * width, 3, 2, 1, false, rng));
            width *= 2;
        }
        for _ in 0..self.residual_blocks {
            layers.push(Layer::Residual(Sequential::new(vec![
                Layer::Conv(Conv2d::new(width, width, 3, 1, 1, false, rng)),
                Layer::InstanceNorm,
                Layer::Relu,
                Layer::Conv(Conv2d::new(width, width, 3, 1, 1, false, rng)),
                Layer::InstanceNorm,
            ])));
        }
        for _ in 0..DOWNSAMPLING_STAGES {
            layers.push(Layer::Upsample2);
            block(&mut layers, Conv2d::new(width, width / 2, 3, 1, 1, false, rng));
            width /= 2;
        }
        layers.push(Layer::Conv(Conv2d::new(width, 1, 7, 1, 3, true, rng)));
        layers.push(Layer::Tanh);
        Ok(Sequential::new(layers))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub width: usize,
}

/// Fully convolutional patch discriminator: every layer has padding 1, the
/// last layer emits one score per patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub layers: Vec<ConvLayerSpec>,
}

impl DiscriminatorSpec {
    /// Kernel 4, strides (2, 2, 2, 1, 1) and widths w, 2w, 4w, 8w, 1.
    pub fn patch(base_width: usize) -> Self {
        let spec = |stride, width| ConvLayerSpec { kernel: 4, stride, width };
        let w = base_width;
        let s = Self { layers: vec![spec(2, w), spec(2, 2 * w), spec(2, 4 * w), spec(1, 8 * w), spec(1, 1)] };
        assert_eq!(receptive_field(&s), PATCH_SIZE, "patch discriminator must see {PATCH_SIZE}×{PATCH_SIZE} patches");
        s
    }

    pub fn desk() -> Self {
        Self::patch(8)
    }

    pub fn full() -> Self {
        Self::patch(32)
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.layers.last().ok_or_else(|| GanError::Config("discriminator has no layers".into()))?;
        if last.width != 1 {
            return Err(GanError::Config("the last discriminator layer must have width 1".into()));
        }
        if self.layers.iter().any(|l| l.kernel == 0 || l.stride == 0 || l.width == 0) {
            return Err(GanError::Config("discriminator kernel, stride and width must be positive".into()));
        }
        Ok(())
    }

    /// Convolutions with leaky ReLU between them and instance norm on every
    /// hidden layer except the first.
    pub fn build<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<Sequential<T>> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut width = 1;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let normed = i > 0 && i < last;
            layers.push(Layer::Conv(Conv2d::new(width, l.width, l.kernel, l.stride, 1, !normed, rng)));
            if normed {
                layers.push(Layer::InstanceNorm);
            }
            if i < last {
                layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            }
            width = l.width;
        }
        Ok(Sequential::new(layers))
    }
}

/// Receptive field of one output unit: `r ← r + (k − 1)·j`, `j ← j·s`.
pub fn receptive_field(spec: &DiscriminatorSpec) -> usize {
    spec.layers
        .iter()
        .fold((1, 1), |(r, j), l| (r + (l.kernel - 1) * j, j * l.stride))
        .0
}
