//! Core value types: HU volumes, axial slices, masks, windowing and cropping.
//!
//! Voxel indices follow the DICOM convention `(col, row, slice)`: the row
//! direction cosine points along increasing column index, the column cosine
//! along increasing row index, and the slice normal is their cross product.
//! Storage is slice-major, then row, then column.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid2, Mask2};
use crate::{Error, Result};

/// HU of air; the fill value for padding and out-of-field samples.
pub const AIR_HU: f32 = -1024.0;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    NonContrast,
    Contrast,
}

impl SeriesKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::NonContrast => "non_contrast",
            SeriesKind::Contrast => "contrast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "non_contrast" | "nc" => Some(SeriesKind::NonContrast),
            "contrast" | "cta" => Some(SeriesKind::Contrast),
            _ => None,
        }
    }
}

/// In-plane direction cosines of an axial acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    row: [f64; 3],
    col: [f64; 3],
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        row: [1.0, 0.0, 0.0],
        col: [0.0, 1.0, 0.0],
    };

    pub fn new(row: [f64; 3], col: [f64; 3]) -> Result<Self> {
        let nr = norm(row);
        let nc = norm(col);
        if (nr - 1.0).abs() > ORTHO_TOL || (nc - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Orientation(format!(
                "direction cosines must be unit length (|row| = {nr}, |col| = {nc})"
            )));
        }
        let d = dot(row, col);
        if d.abs() >= ORTHO_TOL {
            return Err(Error::Orientation(format!(
                "row and column cosines are not orthogonal (dot = {d:e})"
            )));
        }
        Ok(Self { row, col })
    }

    /// Rotation of the identity frame by `angle` radians about the slice normal.
    pub fn in_plane_rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            row: [c, s, 0.0],
            col: [-s, c, 0.0],
        }
    }

    pub fn row(&self) -> [f64; 3] {
        self.row
    }

    pub fn col(&self) -> [f64; 3] {
        self.col
    }

    pub fn normal(&self) -> [f64; 3] {
        cross(self.row, self.col)
    }

    /// Agreement of two orientations to within `tol` per component.
    pub fn approx_eq(&self, other: &Orientation, tol: f64) -> bool {
        self.row
            .iter()
            .chain(&self.col)
            .zip(other.row.iter().chain(&other.col))
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Grid extent and physical pose shared by a volume and its masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// `[cols, rows, slices]`.
    pub dims: [usize; 3],
    /// `[dx, dy, dz]` in mm: column spacing, row spacing, slice spacing.
    pub spacing: [f64; 3],
    /// Patient position of voxel `(0, 0, 0)` in mm.
    pub origin: [f64; 3],
    pub orientation: Orientation,
}

impl Geometry {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        orientation: Orientation,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dimensions must be nonzero: {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Geometry(format!(
                "spacing must be strictly positive: {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!("origin must be finite: {origin:?}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            orientation,
        })
    }

    pub fn cols(&self) -> usize {
        self.dims[0]
    }

    pub fn rows(&self) -> usize {
        self.dims[1]
    }

    pub fn slices(&self) -> usize {
        self.dims[2]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Position of slice `index` along the slice normal, in mm.
    pub fn slice_position(&self, index: usize) -> f64 {
        dot(self.origin, self.orientation.normal()) + index as f64 * self.spacing[2]
    }

    /// Patient coordinates of a continuous voxel index `(col, row, slice)`.
    pub fn index_to_patient(&self, index: [f64; 3]) -> [f64; 3] {
        let r = self.orientation.row();
        let c = self.orientation.col();
        let n = self.orientation.normal();
        let [dx, dy, dz] = self.spacing;
        let mut p = self.origin;
        for k in 0..3 {
            p[k] += r[k] * dx * index[0] + c[k] * dy * index[1] + n[k] * dz * index[2];
        }
        p
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self == other
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    geometry: Geometry,
    kind: SeriesKind,
    voxels: Vec<f32>,
}

impl CtVolume {
    pub fn new(geometry: Geometry, kind: SeriesKind, voxels: Vec<f32>) -> Result<Self> {
        if voxels.len() != geometry.voxel_count() {
            return Err(Error::GridMismatch {
                expected: geometry.dims.to_vec(),
                found: vec![voxels.len()],
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Geometry(format!("non-finite voxel at linear index {i}")));
        }
        Ok(Self {
            geometry,
            kind,
            voxels,
        })
    }

    pub fn filled(geometry: Geometry, kind: SeriesKind, value: f32) -> Self {
        let voxels = vec![value; geometry.voxel_count()];
        Self {
            geometry,
            kind,
            voxels,
        }
    }

    /// Re-stack axial slices (in index order) into a volume.
    pub fn from_slices(geometry: Geometry, kind: SeriesKind, slices: &[AxialSlice]) -> Result<Self> {
        if slices.len() != geometry.slices() {
            return Err(Error::GridMismatch {
                expected: geometry.dims.to_vec(),
                found: vec![geometry.cols(), geometry.rows(), slices.len()],
            });
        }
        let mut voxels = Vec::with_capacity(geometry.voxel_count());
        for s in slices {
            s.pixels.ensure_shape(geometry.rows(), geometry.cols())?;
            voxels.extend_from_slice(s.pixels.as_slice());
        }
        Self::new(geometry, kind, voxels)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize, slice: usize) -> f32 {
        let [nc, nr, _] = self.geometry.dims;
        self.voxels[(slice * nr + row) * nc + col]
    }

    pub fn num_slices(&self) -> usize {
        self.geometry.slices()
    }

    pub fn slice_plane(&self, index: usize) -> &[f32] {
        let n = self.geometry.slice_len();
        &self.voxels[index * n..(index + 1) * n]
    }

    pub fn extract_slice(&self, index: usize) -> Result<AxialSlice> {
        extract_slice(self, index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRegion {
    InnerLumen,
    OuterLumen,
}

impl MaskRegion {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskRegion::InnerLumen => "inner_lumen",
            MaskRegion::OuterLumen => "outer_lumen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inner_lumen" => Some(MaskRegion::InnerLumen),
            "outer_lumen" => Some(MaskRegion::OuterLumen),
            _ => None,
        }
    }
}

/// Binary voxel labels on a volume's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    geometry: Geometry,
    region: MaskRegion,
    labels: Vec<bool>,
}

impl SegmentationMask {
    pub fn new(geometry: Geometry, region: MaskRegion, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != geometry.voxel_count() {
            return Err(Error::GridMismatch {
                expected: geometry.dims.to_vec(),
                found: vec![labels.len()],
            });
        }
        Ok(Self {
            geometry,
            region,
            labels,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn region(&self) -> MaskRegion {
        self.region
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn slice(&self, index: usize) -> Result<Mask2> {
        let g = &self.geometry;
        if index >= g.slices() {
            return Err(Error::SliceOutOfBounds {
                index,
                len: g.slices(),
            });
        }
        let n = g.slice_len();
        Grid2::from_vec(g.rows(), g.cols(), self.labels[index * n..(index + 1) * n].to_vec())
    }

    /// Voxelwise containment; both masks must share a grid.
    pub fn is_subset_of(&self, other: &SegmentationMask) -> bool {
        self.geometry == other.geometry
            && self.labels.iter().zip(&other.labels).all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxialSlice {
    pub pixels: Grid2<f32>,
    /// Position along the slice normal in mm.
    pub z_position: f64,
    /// `[dx, dy]` in-plane spacing in mm.
    pub spacing: [f64; 2],
}

impl AxialSlice {
    pub fn new(pixels: Grid2<f32>, z_position: f64, spacing: [f64; 2]) -> Self {
        Self {
            pixels,
            z_position,
            spacing,
        }
    }
}

pub fn extract_slice(volume: &CtVolume, index: usize) -> Result<AxialSlice> {
    let g = volume.geometry();
    if index >= g.slices() {
        return Err(Error::SliceOutOfBounds {
            index,
            len: g.slices(),
        });
    }
    let pixels = Grid2::from_vec(g.rows(), g.cols(), volume.slice_plane(index).to_vec())?;
    Ok(AxialSlice {
        pixels,
        z_position: g.slice_position(index),
        spacing: [g.spacing[0], g.spacing[1]],
    })
}

/// HU display window mapped affinely onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lo: f32,
    hi: f32,
}

impl Default for Window {
    fn default() -> Self {
        Self {
            lo: -200.0,
            hi: 500.0,
        }
    }
}

impl Window {
    pub fn new(lo: f32, hi: f32) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "window requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f32 {
        self.lo
    }

    pub fn hi(&self) -> f32 {
        self.hi
    }

    pub fn span(&self) -> f32 {
        self.hi - self.lo
    }

    #[inline]
    pub fn normalize(&self, hu: f32) -> f32 {
        let v = hu.clamp(self.lo, self.hi);
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    #[inline]
    pub fn denormalize(&self, value: f32) -> f32 {
        self.lo + (value.clamp(-1.0, 1.0) + 1.0) * 0.5 * (self.hi - self.lo)
    }
}

pub fn hu_normalize(slice: &AxialSlice, window: Window) -> Grid2<f32> {
    slice.pixels.map(|&v| window.normalize(v))
}

pub fn hu_denormalize(values: &Grid2<f32>, window: Window) -> Grid2<f32> {
    values.map(|&v| window.denormalize(v))
}

/// Crop a `size = (rows, cols)` window whose centre pixel is `center`,
/// padding out-of-bounds area with `background`.
///
/// The output pixel `(size.0 / 2, size.1 / 2)` is the input pixel `center`.
pub fn crop_centered(
    slice: &AxialSlice,
    center: (isize, isize),
    size: (usize, usize),
    background: f32,
) -> AxialSlice {
    let r0 = center.0 - (size.0 / 2) as isize;
    let c0 = center.1 - (size.1 / 2) as isize;
    let pixels = Grid2::from_fn(size.0, size.1, |r, c| {
        *slice
            .pixels
            .get_signed(r0 + r as isize, c0 + c as isize)
            .unwrap_or(&background)
    });
    AxialSlice {
        pixels,
        z_position: slice.z_position,
        spacing: slice.spacing,
    }
}

/// Same crop applied to a mask (padding is unset).
pub fn crop_mask(mask: &Mask2, center: (isize, isize), size: (usize, usize)) -> Mask2 {
    let r0 = center.0 - (size.0 / 2) as isize;
    let c0 = center.1 - (size.1 / 2) as isize;
    Grid2::from_fn(size.0, size.1, |r, c| {
        *mask
            .get_signed(r0 + r as isize, c0 + c as isize)
            .unwrap_or(&false)
    })
}

/// Crop centre for a slice: the rounded outer-lumen centroid, or the image
/// centre when no mask is available.
pub fn aorta_center(outer: Option<&Mask2>, shape: (usize, usize)) -> (isize, isize) {
    outer
        .and_then(|m| m.centroid())
        .map(|(r, c)| (r.round() as isize, c.round() as isize))
        .unwrap_or(((shape.0 / 2) as isize, (shape.1 / 2) as isize))
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
