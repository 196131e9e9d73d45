//! A least-squares cycleGAN for translating non-contrast CT slices into
//! synthetic contrast-enhanced slices.
//!
//! Everything is hand-written on top of a GEMM kernel: layers with explicit
//! backward passes ([`layers`]), ResNet generators and 70×70 patch
//! discriminators ([`nets`]), the adversarial / cycle / identity losses
//! ([`loss`]), the optimiser ([`optim`]), the fake-image history
//! ([`pool`]), the training loop ([`train`]) and checkpoints
//! ([`checkpoint`]). Images are normalised to `[−1, 1]`.

pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod loss;
pub mod nets;
pub mod optim;
pub mod pool;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{GanError, Result};
pub use loss::LossWeights;
pub use nets::{receptive_field, DiscriminatorSpec, GeneratorSpec};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{infer_nc2c, train, Dataset, FitOptions, LedgerRow, Pairing, TrainConfig, TrainState};
