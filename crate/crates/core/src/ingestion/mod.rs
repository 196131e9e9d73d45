//! Loading and persisting volumes and masks.
//!
//! DICOM series are input only. The canonical interchange format is the
//! bundle: a little-endian `f32` payload (`<name>.vol`) next to a UTF-8
//! `key = value` header (`<name>.volh`).

mod bundle;
mod dicom;

pub use bundle::{
    bundle_paths, load_mask, load_volume_bundle, read_header, save_mask_bundle, save_volume_bundle,
    BundleHeader,
};
pub use dicom::{load_dicom_files, load_dicom_series};
