//! Building blocks for synthesising contrast-enhanced CT angiograms from
//! non-contrast CT.
//!
//! The crate covers everything around the generative model itself:
//!
//! * [`volume`]: HU volumes, axial slices, masks, windowing and cropping.
//! * [`ingestion`]: DICOM series input and the portable `.vol`/`.volh` bundle.
//! * [`registration`]: pose-driven reorientation of the contrast series onto
//!   the non-contrast grid and axial slice pairing.
//! * [`regions`]: lumen / interface / thrombus partitioning, HU sampling,
//!   one-way ANOVA and the concentric-ring negative control.
//! * [`augment`]: Gaussian radial-basis warps applied jointly to image pairs
//!   and their masks.
//! * [`phantom`]: deterministic synthetic paired cohorts.
//! * [`eval`]: slice metrics, isosurface meshes and cohort summaries.
//!
//! The cycleGAN lives in the `nc2c-gan` crate.

pub mod augment;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingestion;
pub mod output;
pub mod phantom;
pub mod registration;
pub mod regions;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
pub use grid::{Grid2, Mask2};
pub use volume::{
    AxialSlice, CtVolume, Geometry, MaskRegion, Orientation, SegmentationMask, SeriesKind, Window,
};
