//! Deterministic synthetic paired non-contrast / contrast cohorts.
//!
//! A phantom is a tubular aorta with an aneurysmal sac: a lumen disk inside
//! an outer disk whose annulus is thrombus. Geometry is continuous in patient
//! space, so the same anatomy can be rendered on any acquisition grid,
//! including a contrast series with a different pose or slice spacing.
//!
//! All HU defaults are configuration chosen to sit in the soft-tissue range
//! with overlapping yet separable histograms; they are not measurements.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{Grid2, Mask2};
use crate::ingestion::{save_mask_bundle, save_volume_bundle};
use crate::regions::{RegionPartition, BACKGROUND, INTERFACE, LUMEN, THROMBUS};
use crate::registration::{compute_patient_transform, rigid_motion};
use crate::rng::{derive_seed, rng_for};
use crate::volume::{CtVolume, Geometry, MaskRegion, Orientation, SegmentationMask, SeriesKind};
use crate::{Error, Result};

/// Thrombus thickness (px) from which a slice counts as aneurysmal.
pub const ANEURYSM_MIN_THICKNESS_PX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuDistribution {
    pub mean: f64,
    pub sd: f64,
}

impl HuDistribution {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Non-contrast acquisition grid; also the frame the anatomy is defined in.
    pub geometry: Geometry,
    /// Contrast acquisition grid. `None` reuses `geometry`.
    pub cta_geometry: Option<Geometry>,
    pub lumen: HuDistribution,
    pub thrombus: HuDistribution,
    pub background: HuDistribution,
    /// Width of the linear lumen→thrombus HU blend, in pixels.
    pub interface_width_px: f64,
    pub contrast_boost_hu: f64,
    /// Aorta centre `(row, col)` on slice 0, in non-contrast pixels.
    pub center_px: (f64, f64),
    /// Centre drift `(row, col)` per non-contrast slice, in pixels.
    pub drift_px: (f64, f64),
    /// `(inner, outer)` radius per non-contrast slice, in pixels.
    pub radii_px: Vec<(f64, f64)>,
    pub seed: u64,
}

impl PhantomParams {
    /// Default desk-scale phantom: 64×64×32 at (1, 1, 2.5) mm with an
    /// aneurysmal sac in the middle slices.
    pub fn desk(seed: u64) -> Self {
        Self::with_grid([64, 64, 32], [1.0, 1.0, 2.5], seed)
    }

    pub fn with_grid(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Self {
        let geometry = Geometry::new(dims, spacing, [0.0; 3], Orientation::IDENTITY)
            .expect("static default geometry");
        let scale = dims[0].min(dims[1]) as f64 / 64.0;
        let radii_px = sac_profile(dims[2], 9.0 * scale, 2.0 * scale, 9.0 * scale);
        Self {
            geometry,
            cta_geometry: None,
            lumen: HuDistribution::new(45.0, 10.0),
            thrombus: HuDistribution::new(25.0, 10.0),
            background: HuDistribution::new(30.0, 12.0),
            interface_width_px: 3.0,
            contrast_boost_hu: 250.0,
            center_px: ((dims[1] as f64 - 1.0) / 2.0, (dims[0] as f64 - 1.0) / 2.0),
            drift_px: (0.0, 0.0),
            radii_px,
            seed,
        }
    }

    pub fn cta_geometry(&self) -> Geometry {
        self.cta_geometry.unwrap_or(self.geometry)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if self.radii_px.len() != g.slices() {
            return Err(Error::Geometry(format!(
                "{} radius pairs for {} slices",
                self.radii_px.len(),
                g.slices()
            )));
        }
        for d in [self.lumen, self.thrombus, self.background] {
            if !(d.sd > 0.0 && d.sd.is_finite() && d.mean.is_finite()) {
                return Err(Error::Config(format!("invalid HU distribution {d:?}")));
            }
        }
        if self.lumen.mean < self.thrombus.mean {
            return Err(Error::Config(
                "non-contrast lumen mean must not be below the thrombus mean".into(),
            ));
        }
        if !(self.interface_width_px >= 0.0) {
            return Err(Error::Config("interface width must be non-negative".into()));
        }
        for (k, &(ri, ro)) in self.radii_px.iter().enumerate() {
            if !(ri > 0.0 && ri < ro) {
                return Err(Error::Geometry(format!(
                    "slice {k}: need 0 < inner radius < outer radius, got ({ri}, {ro})"
                )));
            }
            let (cr, cc) = self.center_at(k as f64);
            let fits = cr - ro >= 0.0
                && cc - ro >= 0.0
                && cr + ro <= g.rows() as f64 - 1.0
                && cc + ro <= g.cols() as f64 - 1.0;
            if !fits {
                return Err(Error::Geometry(format!(
                    "slice {k}: outer radius {ro} at centre ({cr:.2}, {cc:.2}) leaves the {}x{} grid",
                    g.rows(),
                    g.cols()
                )));
            }
        }
        Ok(())
    }

    fn center_at(&self, s: f64) -> (f64, f64) {
        (
            self.center_px.0 + self.drift_px.0 * s,
            self.center_px.1 + self.drift_px.1 * s,
        )
    }

    fn radii_at(&self, s: f64) -> (f64, f64) {
        let n = self.radii_px.len();
        let s = s.clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 1);
        let f = s - k as f64;
        let (a, b) = (self.radii_px[k], self.radii_px[(k + 1).min(n - 1)]);
        (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
    }

    /// Non-contrast slices whose thrombus is at least
    /// [`ANEURYSM_MIN_THICKNESS_PX`] thick.
    pub fn aneurysmal_slices(&self) -> Vec<usize> {
        self.radii_px
            .iter()
            .enumerate()
            .filter(|(_, &(ri, ro))| ro - ri >= ANEURYSM_MIN_THICKNESS_PX)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Inner radius `inner`, thrombus thickening from `rim` at both ends to
/// `rim + sac` in the middle slice.
pub fn sac_profile(slices: usize, inner: f64, rim: f64, sac: f64) -> Vec<(f64, f64)> {
    let half = ((slices as f64 - 1.0) / 2.0).max(1.0);
    (0..slices)
        .map(|k| {
            let u = (k as f64 - (slices as f64 - 1.0) / 2.0) / half;
            let bump = (std::f64::consts::FRAC_PI_2 * u).cos().powi(2);
            (inner, inner + rim + sac * bump)
        })
        .collect()
}

/// Anatomy sample at a patient point: `(rho, inner, outer, blend)` in mm,
/// with `blend` the lumen→thrombus mixing weight in `[0, 1]`.
struct Anatomy<'a> {
    params: &'a PhantomParams,
    to_nc_index: nalgebra::Matrix4<f64>,
    dx: f64,
    dy: f64,
}

struct Sample {
    rho: f64,
    inner: f64,
    outer: f64,
    blend: f64,
}

impl<'a> Anatomy<'a> {
    fn new(params: &'a PhantomParams) -> Result<Self> {
        let to_nc_index = *compute_patient_transform(&params.geometry)?.inverse()?.matrix();
        Ok(Self {
            params,
            to_nc_index,
            dx: params.geometry.spacing[0],
            dy: params.geometry.spacing[1],
        })
    }

    fn at(&self, p: [f64; 3]) -> Sample {
        let q = self.to_nc_index * nalgebra::Vector4::new(p[0], p[1], p[2], 1.0);
        let (col, row, s) = (q.x, q.y, q.z);
        let (cr, cc) = self.params.center_at(s);
        let rho = (((row - cr) * self.dy).powi(2) + ((col - cc) * self.dx).powi(2)).sqrt();
        let (ri, ro) = self.params.radii_at(s);
        let (inner, outer) = (ri * self.dx, ro * self.dx);
        let w = self.params.interface_width_px * self.dx;
        let blend = if w > 0.0 {
            ((rho - (inner - w / 2.0)) / w).clamp(0.0, 1.0)
        } else if rho <= inner {
            0.0
        } else {
            1.0
        };
        Sample {
            rho,
            inner,
            outer,
            blend,
        }
    }

    /// Mean and sd of the HU at `p`.
    fn hu(&self, p: [f64; 3], boost: f64) -> (f64, f64) {
        let s = self.at(p);
        let prm = self.params;
        if s.rho > s.outer {
            return (prm.background.mean, prm.background.sd);
        }
        let lumen_mean = prm.lumen.mean + boost;
        let mean = lumen_mean + s.blend * (prm.thrombus.mean - lumen_mean);
        let sd = prm.lumen.sd + s.blend * (prm.thrombus.sd - prm.lumen.sd);
        (mean, sd)
    }
}

fn render(
    params: &PhantomParams,
    geometry: &Geometry,
    kind: SeriesKind,
    noise_seed: Option<u64>,
) -> Result<CtVolume> {
    let anatomy = Anatomy::new(params)?;
    let boost = match kind {
        SeriesKind::Contrast => params.contrast_boost_hu,
        SeriesKind::NonContrast => 0.0,
    };
    let mut rng = noise_seed.map(|s| rng_for(s, &[]));
    let [nc, nr, ns] = geometry.dims;
    let mut voxels = Vec::with_capacity(geometry.voxel_count());
    for k in 0..ns {
        for j in 0..nr {
            for i in 0..nc {
                let p = geometry.index_to_patient([i as f64, j as f64, k as f64]);
                let (mean, sd) = anatomy.hu(p, boost);
                let noise: f64 = match rng.as_mut() {
                    Some(r) => StandardNormal.sample(r),
                    None => 0.0,
                };
                voxels.push((mean + sd * noise) as f32);
            }
        }
    }
    CtVolume::new(*geometry, kind, voxels)
}

/// Noise-free (mean HU) rendering of the anatomy on an arbitrary grid.
pub fn render_mean(params: &PhantomParams, geometry: &Geometry, kind: SeriesKind) -> Result<CtVolume> {
    params.validate()?;
    render(params, geometry, kind, None)
}

fn render_mask(params: &PhantomParams, geometry: &Geometry, region: MaskRegion) -> Result<SegmentationMask> {
    let anatomy = Anatomy::new(params)?;
    let [nc, nr, ns] = geometry.dims;
    let mut labels = Vec::with_capacity(geometry.voxel_count());
    for k in 0..ns {
        for j in 0..nr {
            for i in 0..nc {
                let s = anatomy.at(geometry.index_to_patient([i as f64, j as f64, k as f64]));
                labels.push(match region {
                    MaskRegion::InnerLumen => s.rho <= s.inner,
                    MaskRegion::OuterLumen => s.rho <= s.outer,
                });
            }
        }
    }
    SegmentationMask::new(*geometry, region, labels)
}

/// Analytic core partition on non-contrast slice `k`: lumen core of radius
/// `ri·√f`, thrombus core `[ri + δ, ro − δ]` with `δ = (1 − f)(ro − ri)/2`.
fn truth_partition(params: &PhantomParams, k: usize, fraction: f64) -> RegionPartition {
    let g = &params.geometry;
    let (cr, cc) = params.center_at(k as f64);
    let (ri, ro) = params.radii_px[k];
    let lumen_r = ri * fraction.sqrt();
    let delta = (1.0 - fraction) * (ro - ri) / 2.0;
    let labels = Grid2::from_fn(g.rows(), g.cols(), |r, c| {
        let rho = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
        if rho > ro {
            BACKGROUND
        } else if rho <= lumen_r {
            LUMEN
        } else if rho >= ri + delta && rho <= ro - delta {
            THROMBUS
        } else {
            INTERFACE
        }
    });
    RegionPartition {
        labels,
        lumen_flagged: false,
        thrombus_flagged: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomPair {
    pub nc: CtVolume,
    pub cta: CtVolume,
    /// Inner lumen on the contrast grid.
    pub inner: SegmentationMask,
    /// Outer lumen on the contrast grid.
    pub outer: SegmentationMask,
    /// Ground-truth core partition of every non-contrast slice.
    pub truth: Vec<RegionPartition>,
}

impl PhantomPair {
    /// Inner and outer masks of slice `k` on the non-contrast grid.
    pub fn nc_masks(&self, params: &PhantomParams, k: usize) -> Result<(Mask2, Mask2)> {
        if self.inner.geometry() == self.nc.geometry() {
            return Ok((self.inner.slice(k)?, self.outer.slice(k)?));
        }
        let inner = render_mask(params, self.nc.geometry(), MaskRegion::InnerLumen)?;
        let outer = render_mask(params, self.nc.geometry(), MaskRegion::OuterLumen)?;
        Ok((inner.slice(k)?, outer.slice(k)?))
    }
}

pub fn generate_phantom_pair(params: &PhantomParams) -> Result<PhantomPair> {
    params.validate()?;
    let cta_g = params.cta_geometry();
    let nc = render(
        params,
        &params.geometry,
        SeriesKind::NonContrast,
        Some(derive_seed(params.seed, &[0])),
    )?;
    let cta = render(params, &cta_g, SeriesKind::Contrast, Some(derive_seed(params.seed, &[1])))?;
    let inner = render_mask(params, &cta_g, MaskRegion::InnerLumen)?;
    let outer = render_mask(params, &cta_g, MaskRegion::OuterLumen)?;
    let truth = (0..params.geometry.slices())
        .map(|k| truth_partition(params, k, crate::regions::DEFAULT_CORE_FRACTION))
        .collect();
    Ok(PhantomPair {
        nc,
        cta,
        inner,
        outer,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-patient randomisation ranges; each draw is uniform in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortRanges {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub inner_radius_px: (f64, f64),
    pub sac_thickness_px: (f64, f64),
    pub center_jitter_px: f64,
    pub drift_px: f64,
    pub lumen_mean_hu: (f64, f64),
    pub thrombus_mean_hu: (f64, f64),
    pub lumen_sd_hu: f64,
    pub thrombus_sd_hu: f64,
    pub background: HuDistribution,
    pub interface_width_px: f64,
    pub contrast_boost_hu: f64,
    /// Contrast slice spacing; `None` keeps the non-contrast spacing.
    pub cta_dz: Option<f64>,
    /// Largest in-plane translation (mm) of the contrast frame.
    pub cta_max_translation_mm: f64,
    /// Largest in-plane rotation (degrees) of the contrast frame.
    pub cta_max_rotation_deg: f64,
}

impl Default for CohortRanges {
    fn default() -> Self {
        Self {
            dims: [64, 64, 32],
            spacing: [1.0, 1.0, 2.5],
            inner_radius_px: (8.0, 10.0),
            sac_thickness_px: (7.0, 10.0),
            center_jitter_px: 3.0,
            drift_px: 0.08,
            lumen_mean_hu: (44.0, 46.0),
            thrombus_mean_hu: (24.0, 26.0),
            lumen_sd_hu: 10.0,
            thrombus_sd_hu: 10.0,
            background: HuDistribution::new(30.0, 12.0),
            interface_width_px: 3.0,
            contrast_boost_hu: 250.0,
            cta_dz: None,
            cta_max_translation_mm: 0.0,
            cta_max_rotation_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortPatient {
    pub id: String,
    pub split: Split,
    pub params: PhantomParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub master_seed: u64,
    pub patients: Vec<CohortPatient>,
}

impl Cohort {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CohortPatient> {
        self.patients.iter().filter(move |p| p.split == split)
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draw `n` patients and a deterministic half/half train/test split.
pub fn cohort_params(n: usize, master_seed: u64, ranges: &CohortRanges) -> Result<Cohort> {
    if n < 2 {
        return Err(Error::Config(format!("cohort needs at least 2 patients, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(master_seed, &[u64::MAX]));
    let n_train = n - n / 2;
    let mut split = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let mut patients = Vec::with_capacity(n);
    for (i, split) in split.into_iter().enumerate() {
        let seed = derive_seed(master_seed, &[i as u64]);
        let mut rng = rng_for(seed, &[7]);
        let mut p = PhantomParams::with_grid(ranges.dims, ranges.spacing, seed);
        let inner = uniform(&mut rng, ranges.inner_radius_px);
        let sac = uniform(&mut rng, ranges.sac_thickness_px);
        p.radii_px = sac_profile(ranges.dims[2], inner, 2.0, sac);
        let j = ranges.center_jitter_px;
        p.center_px.0 += uniform(&mut rng, (-j, j));
        p.center_px.1 += uniform(&mut rng, (-j, j));
        let d = ranges.drift_px;
        p.drift_px = (uniform(&mut rng, (-d, d)), uniform(&mut rng, (-d, d)));
        // keep the drifted sac inside the grid
        let last = (ranges.dims[2] - 1) as f64;
        let mid_c = (
            p.center_px.0 + p.drift_px.0 * last / 2.0,
            p.center_px.1 + p.drift_px.1 * last / 2.0,
        );
        p.center_px = (
            p.center_px.0 - (mid_c.0 - (ranges.dims[1] as f64 - 1.0) / 2.0) * 0.5,
            p.center_px.1 - (mid_c.1 - (ranges.dims[0] as f64 - 1.0) / 2.0) * 0.5,
        );
        p.lumen = HuDistribution::new(uniform(&mut rng, ranges.lumen_mean_hu), ranges.lumen_sd_hu);
        p.thrombus = HuDistribution::new(uniform(&mut rng, ranges.thrombus_mean_hu), ranges.thrombus_sd_hu);
        p.background = ranges.background;
        p.interface_width_px = ranges.interface_width_px;
        p.contrast_boost_hu = ranges.contrast_boost_hu;
        if ranges.cta_dz.is_some() || ranges.cta_max_translation_mm > 0.0 || ranges.cta_max_rotation_deg > 0.0 {
            let mut g = p.geometry;
            if let Some(dz) = ranges.cta_dz {
                let extent = (g.slices() - 1) as f64 * g.spacing[2];
                g.dims[2] = (extent / dz).round() as usize + 1;
                g.spacing[2] = dz;
            }
            let t = ranges.cta_max_translation_mm;
            let a = ranges.cta_max_rotation_deg.to_radians();
            let pivot = p.geometry.index_to_patient([
                (ranges.dims[0] as f64 - 1.0) / 2.0,
                (ranges.dims[1] as f64 - 1.0) / 2.0,
                0.0,
            ]);
            p.cta_geometry = Some(rigid_motion(
                &g,
                uniform(&mut rng, (-a, a)),
                pivot,
                [uniform(&mut rng, (-t, t)), uniform(&mut rng, (-t, t)), 0.0],
            )?);
        }
        p.validate()?;
        patients.push(CohortPatient {
            id: format!("p{i:03}"),
            split,
            params: p,
        });
    }
    Ok(Cohort {
        master_seed,
        patients,
    })
}

/// Bundle names written for each patient.
pub fn patient_paths(dir: &Path, id: &str) -> [PathBuf; 4] {
    [
        dir.join(format!("{id}_nc")),
        dir.join(format!("{id}_cta")),
        dir.join(format!("{id}_inner")),
        dir.join(format!("{id}_outer")),
    ]
}

pub const MANIFEST: &str = "manifest.csv";

/// Generate a cohort and write its bundles plus `manifest.csv` into `dir`.
pub fn generate_cohort(n: usize, master_seed: u64, ranges: &CohortRanges, dir: &Path) -> Result<Cohort> {
    let cohort = cohort_params(n, master_seed, ranges)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in &cohort.patients {
        let pair = generate_phantom_pair(&p.params)?;
        let [nc, cta, inner, outer] = patient_paths(dir, &p.id);
        save_volume_bundle(&pair.nc, &nc)?;
        save_volume_bundle(&pair.cta, &cta)?;
        save_mask_bundle(&pair.inner, &inner)?;
        save_mask_bundle(&pair.outer, &outer)?;
    }
    write_manifest(&cohort, &dir.join(MANIFEST))?;
    Ok(cohort)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_manifest(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["patient", "split", "master_seed", "seed", "inner_radius_px", "max_outer_radius_px"])
        .map_err(|e| csv_err(path, e))?;
    for p in &cohort.patients {
        let inner = p.params.radii_px.iter().map(|r| r.0).fold(f64::NAN, f64::max);
        let outer = p.params.radii_px.iter().map(|r| r.1).fold(f64::NAN, f64::max);
        w.write_record([
            p.id.clone(),
            p.split.as_str().to_string(),
            cohort.master_seed.to_string(),
            p.params.seed.to_string(),
            format!("{inner:.6}"),
            format!("{outer:.6}"),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Manifest rows as `(patient id, split, master seed)`.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, Split, u64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let split = match rec.get(1) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            other => return Err(Error::Config(format!("bad split {other:?} in {}", path.display()))),
        };
        let seed = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad master seed in {}", path.display())))?;
        out.push((rec.get(0).unwrap_or_default().to_string(), split, seed));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::{partition_regions, sample_regions};

    #[test]
    fn same_params_same_volumes() {
        let p = PhantomParams::desk(11);
        assert_eq!(generate_phantom_pair(&p).unwrap(), generate_phantom_pair(&p).unwrap());
    }

    #[test]
    fn empirical_lumen_mean_tracks_params() {
        let p = PhantomParams::desk(3);
        let pair = generate_phantom_pair(&p).unwrap();
        for k in p.aneurysmal_slices() {
            let px = pair.nc.extract_slice(k).unwrap().pixels;
            let s = sample_regions(&px, &pair.truth[k]).unwrap();
            assert!(s.lumen.len() >= 200);
            let mean = s.lumen.iter().sum::<f64>() / s.lumen.len() as f64;
            assert!((mean - p.lumen.mean).abs() < 2.0, "slice {k}: {mean}");
            let tmean = s.thrombus.iter().sum::<f64>() / s.thrombus.len() as f64;
            assert!((tmean - p.thrombus.mean).abs() < 2.0, "slice {k}: {tmean}");
        }
    }

    #[test]
    fn zero_boost_differs_only_by_noise() {
        let mut p = PhantomParams::desk(5);
        p.contrast_boost_hu = 0.0;
        let pair = generate_phantom_pair(&p).unwrap();
        let n = pair.nc.voxels().len() as f64;
        let diff: f64 = pair
            .nc
            .voxels()
            .iter()
            .zip(pair.cta.voxels())
            .map(|(a, b)| (*b - *a) as f64)
            .sum::<f64>()
            / n;
        assert!(diff.abs() < 1.0, "{diff}");
        assert_ne!(pair.nc.voxels(), pair.cta.voxels());
    }

    #[test]
    fn oversized_radii_are_geometry_errors() {
        let mut p = PhantomParams::desk(1);
        p.radii_px[0] = (10.0, 40.0);
        assert!(matches!(generate_phantom_pair(&p), Err(Error::Geometry(_))));
        let mut q = PhantomParams::desk(1);
        q.radii_px[3] = (12.0, 11.0);
        assert!(matches!(q.validate(), Err(Error::Geometry(_))));
    }

    // Boundary quantization scales with perimeter / area, so the agreement
    // bound is checked at full 256×256 resolution.
    #[test]
    fn truth_agrees_with_erosion_partition() {
        let mut p = PhantomParams::with_grid([256, 256, 5], [0.7, 0.7, 2.5], 9);
        p.center_px = (126.9, 128.3);
        p.drift_px = (0.4, -0.3);
        let pair = generate_phantom_pair(&p).unwrap();
        for k in 0..p.geometry.slices() {
            let part = partition_regions(&pair.inner.slice(k).unwrap(), &pair.outer.slice(k).unwrap(), 0.8).unwrap();
            let truth = &pair.truth[k];
            assert_eq!(part.aorta(), truth.aorta());
            let aorta = truth.aorta().count();
            let disagree = part
                .labels
                .as_slice()
                .iter()
                .zip(truth.labels.as_slice())
                .filter(|(a, b)| a != b)
                .count();
            assert!((disagree as f64) < 0.02 * aorta as f64, "slice {k}: {disagree}/{aorta}");
        }
    }

    #[test]
    fn desk_partitions_hit_core_fraction() {
        let p = PhantomParams::desk(9);
        let pair = generate_phantom_pair(&p).unwrap();
        for k in 0..p.geometry.slices() {
            let (inner, outer) = (pair.inner.slice(k).unwrap(), pair.outer.slice(k).unwrap());
            let part = partition_regions(&inner, &outer, 0.8).unwrap();
            let annulus = outer.and_not(&inner).count() as f64;
            let lumen = inner.count() as f64;
            assert!((part.area(LUMEN) as f64 / lumen - 0.8).abs() <= 0.5 / lumen);
            assert!((part.area(THROMBUS) as f64 / annulus - 0.8).abs() <= 0.5 / annulus);
        }
    }

    #[test]
    fn outer_mask_count_matches_bookkeeping() {
        let p = PhantomParams::desk(2);
        let pair = generate_phantom_pair(&p).unwrap();
        let per_slice: usize = pair.truth.iter().map(|t| t.aorta().count()).sum();
        assert_eq!(pair.outer.count(), per_slice);
    }

    #[test]
    fn cohort_split_is_half_and_disjoint() {
        let c = cohort_params(26, 1234, &CohortRanges::default()).unwrap();
        let train: Vec<_> = c.split(Split::Train).map(|p| p.id.clone()).collect();
        let test: Vec<_> = c.split(Split::Test).map(|p| p.id.clone()).collect();
        assert_eq!((train.len(), test.len()), (13, 13));
        assert!(train.iter().all(|id| !test.contains(id)));
        assert_eq!(c, cohort_params(26, 1234, &CohortRanges::default()).unwrap());
        assert!(cohort_params(1, 0, &CohortRanges::default()).is_err());
    }

    #[test]
    fn registered_cohort_renders_offset_contrast() {
        let ranges = CohortRanges {
            dims: [48, 48, 8],
            cta_dz: Some(1.25),
            cta_max_translation_mm: 4.0,
            cta_max_rotation_deg: 5.0,
            inner_radius_px: (6.0, 7.0),
            sac_thickness_px: (5.0, 6.0),
            ..Default::default()
        };
        let c = cohort_params(2, 5, &ranges).unwrap();
        let p = &c.patients[0].params;
        let g = p.cta_geometry();
        assert_eq!(g.slices(), 15);
        assert_ne!(g.origin, p.geometry.origin);
        let pair = generate_phantom_pair(p).unwrap();
        assert_eq!(pair.inner.geometry(), &g);
        let (inner, outer) = pair.nc_masks(p, 3).unwrap();
        assert!(inner.is_subset_of(&outer) && inner.count() > 0);
    }
}
