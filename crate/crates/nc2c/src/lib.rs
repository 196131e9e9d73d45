//! End-to-end pipeline from non-contrast CT to synthetic contrast CT:
//! configuration, per-stage library functions and the `nc2c` command line.
//!
//! * [`config`]: the TOML pipeline configuration.
//! * [`data`]: patient loading, registration, slice selection and synthesis.
//! * [`stages`]: one function per stage, each writing one output directory.
//! * [`cli`]: flag parsing, run directories and exit codes.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod stages;

pub use error::{PipelineError, Result};

/// Guide chapters compiled as doc-tests so their snippets track the code.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/regions.md")]
    mod regions {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/cyclegan.md")]
    mod cyclegan {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
