//! Glue between the imaging stages and the cycleGAN: per-patient loading,
//! registration onto the non-contrast grid, slice selection, tensor
//! conversion, synthesis and evaluation.

use std::path::Path;

use nc2c_core::augment::TrainingPair;
use nc2c_core::eval::{slice_metrics, EvalConfig, SliceReport};
use nc2c_core::ingestion::{load_mask, load_volume_bundle};
use nc2c_core::phantom::{patient_paths, PhantomPair, ANEURYSM_MIN_THICKNESS_PX};
use nc2c_core::regions::partition_regions;
use nc2c_core::registration::{reorient_mask, reorient_to_reference, Interpolation};
use nc2c_core::{CtVolume, Grid2, Mask2, SegmentationMask, SeriesKind, Window};
use nc2c_gan::{infer_nc2c, Dataset, Tensor, TrainState};

use crate::error::{PipelineError, Result};

/// One patient's acquisitions; the masks live on the contrast grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries {
    pub id: String,
    pub nc: CtVolume,
    pub cta: CtVolume,
    pub inner: SegmentationMask,
    pub outer: SegmentationMask,
}

impl PatientSeries {
    pub fn from_phantom(id: &str, pair: PhantomPair) -> Self {
        Self { id: id.to_string(), nc: pair.nc, cta: pair.cta, inner: pair.inner, outer: pair.outer }
    }
}

pub fn load_patient(dir: &Path, id: &str) -> Result<PatientSeries> {
    let [nc, cta, inner, outer] = patient_paths(dir, id);
    let nc = load_volume_bundle(&nc)?;
    let cta = load_volume_bundle(&cta)?;
    let inner = load_mask(&inner, &cta)?;
    let outer = load_mask(&outer, &cta)?;
    Ok(PatientSeries { id: id.to_string(), nc, cta, inner, outer })
}

/// Contrast series and masks resampled onto the non-contrast grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredPatient {
    pub id: String,
    pub nc: CtVolume,
    pub ct: CtVolume,
    pub inner: SegmentationMask,
    pub outer: SegmentationMask,
}

pub fn register_patient(p: &PatientSeries) -> Result<RegisteredPatient> {
    let g = p.nc.geometry();
    Ok(RegisteredPatient {
        id: p.id.clone(),
        nc: p.nc.clone(),
        ct: reorient_to_reference(&p.cta, g, Interpolation::Trilinear)?,
        inner: reorient_mask(&p.inner, g, Interpolation::Nearest)?,
        outer: reorient_mask(&p.outer, g, Interpolation::Nearest)?,
    })
}

/// A slice is aneurysmal when the equal-area radii of its outer and inner
/// masks differ by at least the minimum thrombus thickness.
pub fn is_aneurysmal(inner: &Mask2, outer: &Mask2) -> bool {
    let r = |m: &Mask2| (m.count() as f64 / std::f64::consts::PI).sqrt();
    inner.count() > 0 && r(outer) - r(inner) >= ANEURYSM_MIN_THICKNESS_PX
}

pub fn aneurysmal_slices(p: &RegisteredPatient) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for k in 0..p.nc.num_slices() {
        if is_aneurysmal(&p.inner.slice(k)?, &p.outer.slice(k)?) {
            out.push(k);
        }
    }
    Ok(out)
}

/// `count` slices spread evenly over `candidates` (all of them when
/// `count` is 0 or at least their number).
pub fn spread(candidates: &[usize], count: usize) -> Vec<usize> {
    if count == 0 || count >= candidates.len() {
        return candidates.to_vec();
    }
    (0..count)
        .map(|i| candidates[((2 * i + 1) * candidates.len()) / (2 * count)])
        .collect()
}

pub fn training_pairs(p: &RegisteredPatient, slices: &[usize]) -> Result<Vec<TrainingPair>> {
    slices
        .iter()
        .map(|&k| {
            Ok(TrainingPair {
                id: format!("{}_s{k:03}", p.id),
                nc: p.nc.extract_slice(k)?,
                ct: p.ct.extract_slice(k)?,
                inner: p.inner.slice(k)?,
                outer: p.outer.slice(k)?,
            })
        })
        .collect()
}

pub fn to_tensor(pixels: &Grid2<f32>, window: Window) -> Tensor<f32> {
    let (rows, cols) = pixels.shape();
    Tensor::image(rows, cols, pixels.as_slice().iter().map(|&v| window.normalize(v)).collect())
        .expect("grid and tensor sizes agree")
}

pub fn from_tensor(t: &Tensor<f32>, window: Window) -> Result<Grid2<f32>> {
    let [_, _, h, w] = t.shape();
    Ok(Grid2::from_vec(h, w, t.data().iter().map(|&v| window.denormalize(v)).collect())?)
}

pub fn dataset(pairs: &[TrainingPair], window: Window) -> Dataset<f32> {
    Dataset {
        nc: pairs.iter().map(|p| to_tensor(&p.nc.pixels, window)).collect(),
        ct: pairs.iter().map(|p| to_tensor(&p.ct.pixels, window)).collect(),
    }
}

/// Synthetic contrast slice in HU. Sides that are not a multiple of 4 are
/// padded with the window floor and cropped back.
pub fn synthesize_slice(state: &TrainState<f32>, pixels: &Grid2<f32>, window: Window) -> Result<Grid2<f32>> {
    let (rows, cols) = pixels.shape();
    let m = state.config.generator.size_multiple();
    let (h, w) = (rows.div_ceil(m) * m, cols.div_ceil(m) * m);
    let padded = Grid2::from_fn(h, w, |r, c| if r < rows && c < cols { *pixels.get(r, c) } else { window.lo() });
    let out = from_tensor(&infer_nc2c(state, &to_tensor(&padded, window))?, window)?;
    Ok(Grid2::from_fn(rows, cols, |r, c| *out.get(r, c)))
}

/// Every slice of `nc` translated to contrast.
pub fn synthesize_volume(state: &TrainState<f32>, nc: &CtVolume, window: Window) -> Result<CtVolume> {
    let g = *nc.geometry();
    let mut voxels = Vec::with_capacity(g.voxel_count());
    for k in 0..nc.num_slices() {
        voxels.extend(synthesize_slice(state, &nc.extract_slice(k)?.pixels, window)?.into_vec());
    }
    Ok(CtVolume::new(g, SeriesKind::Contrast, voxels)?)
}

/// Slice reports of `generated` against the registered contrast series,
/// with regions partitioned from the registered masks.
pub fn evaluate_patient(
    p: &RegisteredPatient,
    generated: &CtVolume,
    slices: &[usize],
    core_fraction: f64,
    config: &EvalConfig,
) -> Result<Vec<SliceReport>> {
    if !generated.geometry().same_grid(p.nc.geometry()) {
        return Err(PipelineError::Validation(format!("generated volume for {} is not on its grid", p.id)));
    }
    slices
        .iter()
        .map(|&k| {
            let partition = partition_regions(&p.inner.slice(k)?, &p.outer.slice(k)?, core_fraction)?;
            Ok(slice_metrics(
                &p.id,
                k,
                &generated.extract_slice(k)?.pixels,
                &p.ct.extract_slice(k)?.pixels,
                &partition,
                config,
            )?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nc2c_core::grid::disk;
    use nc2c_core::phantom::{generate_phantom_pair, PhantomParams};

    #[test]
    fn spread_picks_evenly() {
        let c: Vec<usize> = (10..20).collect();
        assert_eq!(spread(&c, 1), vec![15]);
        assert_eq!(spread(&c, 2), vec![12, 17]);
        assert_eq!(spread(&c, 0), c);
        assert_eq!(spread(&c, 50), c);
    }

    #[test]
    fn aneurysm_rule_uses_equal_area_radii() {
        let inner = disk(64, 64, (32.0, 32.0), 8.0);
        assert!(is_aneurysmal(&inner, &disk(64, 64, (32.0, 32.0), 14.0)));
        assert!(!is_aneurysmal(&inner, &disk(64, 64, (32.0, 32.0), 10.0)));
        assert!(!is_aneurysmal(&disk(64, 64, (0.0, 0.0), 0.1).and(&inner), &inner));
    }

    #[test]
    fn registered_phantom_matches_its_own_slices() {
        let params = PhantomParams::desk(4);
        let p = PatientSeries::from_phantom("p", generate_phantom_pair(&params).unwrap());
        let r = register_patient(&p).unwrap();
        assert_eq!(r.ct, p.cta);
        assert_eq!(aneurysmal_slices(&r).unwrap(), params.aneurysmal_slices());
    }

    #[test]
    fn tensor_round_trip_is_windowed() {
        let w = Window::default();
        let g = Grid2::from_fn(4, 8, |r, c| -300.0 + 100.0 * (r + c) as f32);
        let back = from_tensor(&to_tensor(&g, w), w).unwrap();
        for (a, b) in g.as_slice().iter().zip(back.as_slice()) {
            assert!((a.clamp(-200.0, 500.0) - b).abs() < 1e-3);
        }
    }
}
