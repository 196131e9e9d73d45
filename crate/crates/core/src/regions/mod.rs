//! Lumen / interface / thrombus partitioning and regional HU statistics.
//!
//! The partition is derived from the masks of the contrast series and then
//! applied to the registered non-contrast slice, whose regions are visually
//! indistinct. Each region is shrunk to 80% of its area before sampling and
//! the band left between the two cores is treated as the blood–thrombus
//! interface.

mod anova;
mod distance;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use anova::{one_way_anova, AnovaResult};
pub use distance::distance_to_background;

use crate::grid::{Grid2, Mask2};
use crate::{Error, Result};

/// Regions below this many pixels are not sampled.
pub const MIN_REGION_AREA: usize = 25;

/// Default core area fraction ("reduced by 20%").
pub const DEFAULT_CORE_FRACTION: f64 = 0.8;

pub const BACKGROUND: u8 = 0;
pub const LUMEN: u8 = 1;
pub const INTERFACE: u8 = 2;
pub const THROMBUS: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Erosion {
    pub core: Mask2,
    /// Set when the input was too small to erode meaningfully; `core` is
    /// then empty.
    pub flagged: bool,
    pub achieved_fraction: f64,
}

/// Shrink `mask` to `round(fraction · area)` pixels, keeping those deepest
/// inside it.
///
/// Pixels are ranked by distance to the background. Distance levels tie
/// across whole pixel rings, so ties are broken by the summed distance of the
/// 3×3 neighbourhood and then by raster order, which makes the achieved
/// fraction exact to one pixel even on thin annuli.
pub fn erode_to_fraction(mask: &Mask2, fraction: f64) -> Result<Erosion> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("erosion fraction must lie in (0, 1], got {fraction}")));
    }
    let area = mask.count();
    if area == 0 {
        return Err(Error::EmptyRegion);
    }
    if area < MIN_REGION_AREA {
        return Ok(Erosion {
            core: Grid2::filled(mask.rows(), mask.cols(), false),
            flagged: true,
            achieved_fraction: 0.0,
        });
    }
    if fraction == 1.0 {
        return Ok(Erosion {
            core: mask.clone(),
            flagged: false,
            achieved_fraction: 1.0,
        });
    }
    let dist = distance_to_background(mask);
    let (rows, cols) = mask.shape();
    let neighbourhood = |r: usize, c: usize| {
        let mut s = 0.0;
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                if let Some(d) = dist.get_signed(r as isize + dr, c as isize + dc) {
                    s += d;
                }
            }
        }
        s
    };
    let mut ranked: Vec<(f64, f64, usize)> = mask
        .indexed()
        .filter(|(_, &m)| m)
        .map(|((r, c), _)| (*dist.get(r, c), neighbourhood(r, c), r * cols + c))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let keep = ((fraction * area as f64).round() as usize).min(area);
    let mut core = Grid2::filled(rows, cols, false);
    for &(_, _, i) in &ranked[..keep] {
        core.set(i / cols, i % cols, true);
    }
    Ok(Erosion {
        core,
        flagged: false,
        achieved_fraction: keep as f64 / area as f64,
    })
}

/// Per-slice tri-label map over the outer-lumen cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub labels: Grid2<u8>,
    pub lumen_flagged: bool,
    pub thrombus_flagged: bool,
}

impl RegionPartition {
    pub fn mask(&self, label: u8) -> Mask2 {
        self.labels.map(|&l| l == label)
    }

    pub fn area(&self, label: u8) -> usize {
        self.labels.as_slice().iter().filter(|&&l| l == label).count()
    }

    /// Union of all labelled regions, i.e. the outer mask.
    pub fn aorta(&self) -> Mask2 {
        self.labels.map(|&l| l != BACKGROUND)
    }

    pub fn flagged(&self) -> bool {
        self.lumen_flagged || self.thrombus_flagged
    }
}

fn core_or_empty(region: &Mask2, fraction: f64) -> Result<Erosion> {
    match erode_to_fraction(region, fraction) {
        Err(Error::EmptyRegion) => Ok(Erosion {
            core: Grid2::filled(region.rows(), region.cols(), false),
            flagged: false,
            achieved_fraction: 0.0,
        }),
        other => other,
    }
}

pub fn partition_regions(inner: &Mask2, outer: &Mask2, fraction: f64) -> Result<RegionPartition> {
    outer.ensure_shape(inner.rows(), inner.cols())?;
    if !inner.is_subset_of(outer) {
        let stray = inner.and_not(outer).count();
        return Err(Error::MaskConsistency(format!(
            "inner lumen has {stray} pixel(s) outside the outer lumen"
        )));
    }
    if outer.count() == 0 {
        return Err(Error::EmptyRegion);
    }
    let lumen = core_or_empty(inner, fraction)?;
    let thrombus = core_or_empty(&outer.and_not(inner), fraction)?;
    let labels = Grid2::from_fn(outer.rows(), outer.cols(), |r, c| {
        if !*outer.get(r, c) {
            BACKGROUND
        } else if *lumen.core.get(r, c) {
            LUMEN
        } else if *thrombus.core.get(r, c) {
            THROMBUS
        } else {
            INTERFACE
        }
    });
    Ok(RegionPartition {
        labels,
        lumen_flagged: lumen.flagged,
        thrombus_flagged: thrombus.flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Lumen,
    Interface,
    Thrombus,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Lumen, Region::Interface, Region::Thrombus];

    pub fn label(self) -> u8 {
        match self {
            Region::Lumen => LUMEN,
            Region::Interface => INTERFACE,
            Region::Thrombus => THROMBUS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Lumen => "lumen",
            Region::Interface => "interface",
            Region::Thrombus => "thrombus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionSamples {
    pub patient: String,
    pub slice: usize,
    pub lumen: Vec<f64>,
    pub interface: Vec<f64>,
    pub thrombus: Vec<f64>,
}

impl RegionSamples {
    pub fn get(&self, region: Region) -> &[f64] {
        match region {
            Region::Lumen => &self.lumen,
            Region::Interface => &self.interface,
            Region::Thrombus => &self.thrombus,
        }
    }

    pub fn with_ids(mut self, patient: impl Into<String>, slice: usize) -> Self {
        self.patient = patient.into();
        self.slice = slice;
        self
    }
}

pub fn sample_regions(pixels: &Grid2<f32>, partition: &RegionPartition) -> Result<RegionSamples> {
    pixels.ensure_shape(partition.labels.rows(), partition.labels.cols())?;
    let mut s = RegionSamples::default();
    for (&v, &l) in pixels.as_slice().iter().zip(partition.labels.as_slice()) {
        match l {
            LUMEN => s.lumen.push(v as f64),
            INTERFACE => s.interface.push(v as f64),
            THROMBUS => s.thrombus.push(v as f64),
            _ => {}
        }
    }
    Ok(s)
}

/// Split `inner` into `n_rings` equal-area concentric rings ordered from the
/// centre outwards, by ranking pixels on their distance to the boundary.
pub fn concentric_rings(inner: &Mask2, n_rings: usize) -> Result<Vec<Mask2>> {
    if n_rings == 0 {
        return Err(Error::Config("n_rings must be at least 1".into()));
    }
    let area = inner.count();
    if area == 0 {
        return Err(Error::EmptyRegion);
    }
    if area < n_rings * MIN_REGION_AREA {
        return Err(Error::DegenerateRegion {
            area,
            minimum: n_rings * MIN_REGION_AREA,
        });
    }
    if n_rings == 1 {
        return Ok(vec![inner.clone()]);
    }
    let dist = distance_to_background(inner);
    let mut order: Vec<usize> = (0..inner.len()).filter(|&i| inner.as_slice()[i]).collect();
    // deepest first; ties broken by raster order so the split is deterministic
    order.sort_by(|&a, &b| dist.as_slice()[b].total_cmp(&dist.as_slice()[a]).then(a.cmp(&b)));
    let mut rings = Vec::with_capacity(n_rings);
    let mut start = 0;
    for k in 0..n_rings {
        let end = (k + 1) * area / n_rings;
        let mut ring = Grid2::filled(inner.rows(), inner.cols(), false);
        for &i in &order[start..end] {
            ring.as_mut_slice()[i] = true;
        }
        rings.push(ring);
        start = end;
    }
    Ok(rings)
}

/// Sample `pixels` under each ring.
pub fn sample_rings(pixels: &Grid2<f32>, rings: &[Mask2]) -> Result<Vec<Vec<f64>>> {
    rings
        .iter()
        .map(|ring| {
            pixels.ensure_shape(ring.rows(), ring.cols())?;
            Ok(pixels
                .as_slice()
                .iter()
                .zip(ring.as_slice())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v as f64)
                .collect())
        })
        .collect()
}

/// Histogram keyed by bin index; bin `k` covers `[k·w, (k+1)·w)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: BTreeMap<i64, usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
        }
        let mut counts = BTreeMap::new();
        for &v in values {
            *counts.entry((v / bin_width).floor() as i64).or_insert(0) += 1;
        }
        Ok(Self { bin_width, counts })
    }

    /// `(bin_start, count)` pairs in increasing order.
    pub fn bins(&self) -> Vec<(f64, usize)> {
        self.counts
            .iter()
            .map(|(&k, &n)| (k as f64 * self.bin_width, n))
            .collect()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn region_histogram(samples: &RegionSamples, bin_width: f64) -> Result<BTreeMap<Region, Histogram>> {
    Region::ALL
        .iter()
        .map(|&r| Ok((r, Histogram::new(samples.get(r), bin_width)?)))
        .collect()
}

/// Pairwise comparisons reported for every slice and patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AllRegions,
    LumenThrombus,
    LumenInterface,
    InterfaceThrombus,
}

impl Comparison {
    pub const PAIRWISE: [Comparison; 3] = [
        Comparison::LumenThrombus,
        Comparison::LumenInterface,
        Comparison::InterfaceThrombus,
    ];

    pub fn regions(self) -> &'static [Region] {
        match self {
            Comparison::AllRegions => &Region::ALL,
            Comparison::LumenThrombus => &[Region::Lumen, Region::Thrombus],
            Comparison::LumenInterface => &[Region::Lumen, Region::Interface],
            Comparison::InterfaceThrombus => &[Region::Interface, Region::Thrombus],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparison::AllRegions => "all_regions",
            Comparison::LumenThrombus => "lumen_vs_thrombus",
            Comparison::LumenInterface => "lumen_vs_interface",
            Comparison::InterfaceThrombus => "interface_vs_thrombus",
        }
    }
}

/// Multiple-comparison handling for the three pairwise tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub comparison: Comparison,
    pub anova: AnovaResult,
    /// p after the configured correction.
    pub p_adjusted: f64,
}

/// Regional statistics of one slice (or of a pooled patient when `slice`
/// is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub patient: String,
    pub slice: Option<usize>,
    pub counts: [usize; 3],
    pub means: [f64; 3],
    pub sds: [f64; 3],
    pub comparisons: Vec<ComparisonResult>,
}

impl RegionStats {
    pub fn comparison(&self, which: Comparison) -> Option<&ComparisonResult> {
        self.comparisons.iter().find(|c| c.comparison == which)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Run the all-region and pairwise ANOVAs on one set of samples. Comparisons
/// with a region of fewer than two samples are skipped.
pub fn compare_regions(samples: &RegionSamples, slice: Option<usize>, correction: Correction) -> RegionStats {
    let mut counts = [0; 3];
    let mut means = [0.0; 3];
    let mut sds = [0.0; 3];
    for (k, &r) in Region::ALL.iter().enumerate() {
        let v = samples.get(r);
        counts[k] = v.len();
        (means[k], sds[k]) = mean_sd(v);
    }
    let mut comparisons = Vec::new();
    for which in std::iter::once(Comparison::AllRegions).chain(Comparison::PAIRWISE) {
        let groups: Vec<&[f64]> = which.regions().iter().map(|&r| samples.get(r)).collect();
        if let Ok(anova) = one_way_anova(&groups) {
            let p_adjusted = match (correction, which) {
                (Correction::Bonferroni, c) if c != Comparison::AllRegions => (anova.p * 3.0).min(1.0),
                _ => anova.p,
            };
            comparisons.push(ComparisonResult {
                comparison: which,
                anova,
                p_adjusted,
            });
        }
    }
    RegionStats {
        patient: samples.patient.clone(),
        slice,
        counts,
        means,
        sds,
        comparisons,
    }
}

/// Slice-level and pooled statistics of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientAnalysis {
    pub patient: String,
    pub slices: Vec<RegionStats>,
    /// Slices excluded because a region fell under [`MIN_REGION_AREA`].
    pub flagged_slices: Vec<usize>,
    pub pooled: RegionStats,
}

/// Analyse `(slice index, non-contrast pixels, partition)` triples of one
/// patient. Flagged slices are excluded from both slice-level and pooled
/// statistics.
pub fn analyze_patient(
    patient: &str,
    slices: &[(usize, Grid2<f32>, RegionPartition)],
    correction: Correction,
) -> Result<PatientAnalysis> {
    let mut stats = Vec::new();
    let mut flagged = Vec::new();
    let mut pooled = RegionSamples {
        patient: patient.to_string(),
        ..Default::default()
    };
    for (index, pixels, partition) in slices {
        if partition.flagged() {
            flagged.push(*index);
            continue;
        }
        let s = sample_regions(pixels, partition)?.with_ids(patient, *index);
        stats.push(compare_regions(&s, Some(*index), correction));
        pooled.lumen.extend(&s.lumen);
        pooled.interface.extend(&s.interface);
        pooled.thrombus.extend(&s.thrombus);
    }
    Ok(PatientAnalysis {
        patient: patient.to_string(),
        slices: stats,
        flagged_slices: flagged,
        pooled: compare_regions(&pooled, None, correction),
    })
}
