//! Pose-driven reorientation of the contrast series onto the non-contrast
//! image plane, and axial slice pairing.
//!
//! Registration is rigid and uses only the acquisition pose (position,
//! direction cosines, spacing). Every output voxel of the reference grid is
//! mapped through `T_moving⁻¹ · T_reference` into the moving grid and
//! sampled there.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::volume::{CtVolume, Geometry, Orientation, SegmentationMask, AIR_HU};
use crate::{Error, Result};

/// Tolerance under which a resampling coordinate is snapped to the grid.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

/// Homogeneous map from voxel index `(col, row, slice)` to patient mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientTransform {
    matrix: Matrix4<f64>,
}

impl PatientTransform {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn apply(&self, index: [f64; 3]) -> [f64; 3] {
        let p = self.matrix * Vector4::new(index[0], index[1], index[2], 1.0);
        [p.x, p.y, p.z]
    }

    pub fn inverse(&self) -> Result<PatientTransform> {
        self.matrix
            .try_inverse()
            .map(|matrix| PatientTransform { matrix })
            .ok_or_else(|| Error::Orientation("patient transform is singular".into()))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PatientTransform) -> PatientTransform {
        PatientTransform {
            matrix: self.matrix * other.matrix,
        }
    }
}

pub fn compute_patient_transform(geometry: &Geometry) -> Result<PatientTransform> {
    let o = geometry.orientation;
    // Re-validate: geometry fields are public and may have been edited.
    Orientation::new(o.row(), o.col())?;
    let (r, c, n) = (o.row(), o.col(), o.normal());
    let [dx, dy, dz] = geometry.spacing;
    let t = geometry.origin;
    #[rustfmt::skip]
    let matrix = Matrix4::new(
        r[0] * dx, c[0] * dy, n[0] * dz, t[0],
        r[1] * dx, c[1] * dy, n[1] * dz, t[1],
        r[2] * dx, c[2] * dy, n[2] * dz, t[2],
        0.0,       0.0,       0.0,       1.0,
    );
    if matrix.determinant().abs() < 1e-12 {
        return Err(Error::Orientation("degenerate direction cosines".into()));
    }
    Ok(PatientTransform { matrix })
}

/// Move an acquisition frame rigidly in patient space: rotate by `angle`
/// radians about the patient z axis through `pivot`, then translate.
///
/// The anatomy stays put; only the scanner frame changes, which is exactly
/// what a pose offset between two acquisitions records in the metadata.
pub fn rigid_motion(geometry: &Geometry, angle: f64, pivot: [f64; 3], translation: [f64; 3]) -> Result<Geometry> {
    let rot = Matrix3::new(
        angle.cos(), -angle.sin(), 0.0,
        angle.sin(), angle.cos(), 0.0,
        0.0, 0.0, 1.0,
    );
    let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
    let arr = |a: Vector3<f64>| [a.x, a.y, a.z];
    let o = geometry.orientation;
    let row = arr(rot * v(o.row()));
    let col = arr(rot * v(o.col()));
    let origin = arr(rot * (v(geometry.origin) - v(pivot)) + v(pivot) + v(translation));
    Geometry::new(geometry.dims, geometry.spacing, origin, Orientation::new(row, col)?)
}

#[inline]
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Resample a scalar field defined on `moving` onto `reference`.
fn resample<F>(
    moving: &Geometry,
    reference: &Geometry,
    interpolation: Interpolation,
    fill: f32,
    sample: F,
) -> Result<Vec<f32>>
where
    F: Fn(usize, usize, usize) -> f32,
{
    let map = compute_patient_transform(moving)?
        .inverse()?
        .compose(&compute_patient_transform(reference)?);
    let m = map.matrix();
    let [mc, mr, ms] = moving.dims;
    let limits = [mc as f64 - 1.0, mr as f64 - 1.0, ms as f64 - 1.0];
    let [nc, nr, ns] = reference.dims;
    let mut out = Vec::with_capacity(reference.voxel_count());
    let mut inside = 0usize;
    for k in 0..ns {
        for j in 0..nr {
            for i in 0..nc {
                let p = m * Vector4::new(i as f64, j as f64, k as f64, 1.0);
                let idx = [snap(p.x), snap(p.y), snap(p.z)];
                let in_field = (0..3).all(|a| idx[a] >= -SNAP && idx[a] <= limits[a] + SNAP);
                if !in_field {
                    out.push(fill);
                    continue;
                }
                inside += 1;
                let idx = [
                    idx[0].clamp(0.0, limits[0]),
                    idx[1].clamp(0.0, limits[1]),
                    idx[2].clamp(0.0, limits[2]),
                ];
                let v = match interpolation {
                    Interpolation::Nearest => sample(
                        idx[0].round() as usize,
                        idx[1].round() as usize,
                        idx[2].round() as usize,
                    ),
                    Interpolation::Trilinear => trilinear(idx, [mc, mr, ms], &sample),
                };
                out.push(v);
            }
        }
    }
    if inside == 0 {
        return Err(Error::Registration(
            "moving and reference volumes do not overlap in patient space".into(),
        ));
    }
    Ok(out)
}

fn trilinear<F: Fn(usize, usize, usize) -> f32>(idx: [f64; 3], dims: [usize; 3], sample: &F) -> f32 {
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let f = idx[a].floor();
        base[a] = f as usize;
        frac[a] = idx[a] - f;
        if base[a] + 1 >= dims[a] {
            base[a] = dims[a] - 1;
            frac[a] = 0.0;
        }
    }
    let mut acc = 0.0f64;
    for corner in 0..8usize {
        let mut w = 1.0;
        let mut at = base;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                w *= frac[a];
                at[a] += 1;
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w != 0.0 {
            acc += w * sample(at[0], at[1], at[2]) as f64;
        }
    }
    acc as f32
}

/// Resample `moving` onto `reference`'s grid; out-of-field voxels are air.
pub fn reorient_to_reference(
    moving: &CtVolume,
    reference: &Geometry,
    interpolation: Interpolation,
) -> Result<CtVolume> {
    let voxels = resample(moving.geometry(), reference, interpolation, AIR_HU, |i, j, k| {
        moving.at(i, j, k)
    })?;
    CtVolume::new(*reference, moving.kind(), voxels)
}

/// Resample a mask onto `reference`'s grid. Only nearest-neighbour sampling
/// is accepted so the result stays binary; out-of-field voxels are unset.
pub fn reorient_mask(
    mask: &SegmentationMask,
    reference: &Geometry,
    interpolation: Interpolation,
) -> Result<SegmentationMask> {
    if interpolation != Interpolation::Nearest {
        return Err(Error::Config(
            "masks must be reoriented with nearest-neighbour interpolation".into(),
        ));
    }
    let g = *mask.geometry();
    let labels = mask.labels();
    let [nc, nr, _] = g.dims;
    let values = resample(&g, reference, interpolation, 0.0, |i, j, k| {
        if labels[(k * nr + j) * nc + i] {
            1.0
        } else {
            0.0
        }
    })?;
    SegmentationMask::new(*reference, mask.region(), values.into_iter().map(|v| v != 0.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePair {
    pub nc_index: usize,
    pub ct_index: usize,
    pub delta_z_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlicePairing {
    pub pairs: Vec<SlicePair>,
}

impl SlicePairing {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_pairing(self, std::io::BufWriter::new(file))
    }
}

/// Pair every non-contrast slice with the nearest contrast slice along the
/// shared slice normal (in-plane rotations are allowed), dropping pairs farther apart than `tolerance_mm` (default:
/// half the non-contrast slice spacing).
pub fn pair_slices(nc: &Geometry, ct: &Geometry, tolerance_mm: Option<f64>) -> Result<SlicePairing> {
    let (a, b) = (nc.orientation.normal(), ct.orientation.normal());
    if a[0] * b[0] + a[1] * b[1] + a[2] * b[2] < 1.0 - 1e-9 {
        return Err(Error::Registration(
            "slice pairing requires both series to share a slice normal".into(),
        ));
    }
    let tol = tolerance_mm.unwrap_or(nc.spacing[2] / 2.0);
    let ct_z: Vec<f64> = (0..ct.slices()).map(|k| ct.slice_position(k)).collect();
    let mut pairs = Vec::new();
    for i in 0..nc.slices() {
        let z = nc.slice_position(i);
        let upper = ct_z.partition_point(|&c| c < z);
        let candidates = [upper.checked_sub(1), (upper < ct_z.len()).then_some(upper)];
        let best = candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (ct_z[a] - z).abs().total_cmp(&(ct_z[b] - z).abs()).then(a.cmp(&b)));
        if let Some(j) = best {
            let dz = (ct_z[j] - z).abs();
            if dz <= tol + 1e-9 {
                pairs.push(SlicePair {
                    nc_index: i,
                    ct_index: j,
                    delta_z_mm: dz,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Registration(format!(
            "no slice pairs within {tol} mm"
        )));
    }
    Ok(SlicePairing { pairs })
}

/// Write the pairing as CSV to any writer.
pub fn write_pairing<W: Write>(pairing: &SlicePairing, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Registration(e.to_string());
    w.write_record(["nc_index", "ct_index", "delta_z_mm"]).map_err(err)?;
    for p in &pairing.pairs {
        w.write_record([p.nc_index.to_string(), p.ct_index.to_string(), p.delta_z_mm.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Registration(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::SeriesKind;
    use crate::MaskRegion;

    fn geom(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], o: Orientation) -> Geometry {
        Geometry::new(dims, spacing, origin, o).unwrap()
    }

    fn noisy_volume(g: Geometry) -> CtVolume {
        let voxels = (0..g.voxel_count())
            .map(|i| ((i as u64 * 2654435761) % 997) as f32 - 300.0)
            .collect();
        CtVolume::new(g, SeriesKind::Contrast, voxels).unwrap()
    }

    #[test]
    fn identity_transform() {
        let g = geom([4, 4, 4], [1.0; 3], [0.0; 3], Orientation::IDENTITY);
        let t = compute_patient_transform(&g).unwrap();
        assert_eq!(*t.matrix(), Matrix4::identity());
    }

    #[test]
    fn translation_column_is_origin() {
        let g = geom([4, 4, 4], [1.0; 3], [10.0, 20.0, 30.0], Orientation::IDENTITY);
        let t = compute_patient_transform(&g).unwrap();
        let m = t.matrix();
        assert_eq!([m[(0, 3)], m[(1, 3)], m[(2, 3)]], [10.0, 20.0, 30.0]);
        assert_eq!(t.apply([0.0; 3]), [10.0, 20.0, 30.0]);
    }

    #[test]
    fn rotated_frame_maps_index_by_hand() {
        let o = Orientation::new([0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]).unwrap();
        let origin = [5.0, -7.0, 12.0];
        let g = geom([8, 8, 4], [1.0, 1.0, 2.5], origin, o);
        let t = compute_patient_transform(&g).unwrap();
        let p = t.apply([2.0, 3.0, 1.0]);
        let expected = [origin[0] - 3.0, origin[1] + 2.0, origin[2] + 2.5];
        for k in 0..3 {
            assert!((p[k] - expected[k]).abs() < 1e-12);
        }
        // (1,0,0) steps along the row cosine scaled by dx
        assert_eq!(t.apply([1.0, 0.0, 0.0]), [5.0, -6.0, 12.0]);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let o = Orientation::in_plane_rotation(0.41);
        let g = geom([8, 8, 4], [0.8, 0.9, 2.5], [3.0, -4.0, 5.0], o);
        let t = compute_patient_transform(&g).unwrap();
        let id = t.inverse().unwrap().compose(&t);
        assert!((id.matrix() - Matrix4::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn self_registration_is_bit_identical() {
        let o = Orientation::in_plane_rotation(0.2);
        let g = geom([10, 9, 5], [0.7, 0.7, 2.5], [1.5, 2.5, -3.0], o);
        let v = noisy_volume(g);
        for interp in [Interpolation::Nearest, Interpolation::Trilinear] {
            let out = reorient_to_reference(&v, &g, interp).unwrap();
            assert_eq!(out, v);
        }
    }

    #[test]
    fn one_voxel_shift_recovers_interior() {
        let reference = geom([12, 10, 4], [1.0; 3], [0.0; 3], Orientation::IDENTITY);
        let r = noisy_volume(reference);
        // moving grid starts one voxel further along x, content shifted to match
        let moving_g = geom([12, 10, 4], [1.0; 3], [1.0, 0.0, 0.0], Orientation::IDENTITY);
        let voxels = (0..moving_g.voxel_count())
            .map(|lin| {
                let (i, j, k) = (lin % 12, lin / 12 % 10, lin / 120);
                if i + 1 < 12 { r.at(i + 1, j, k) } else { 0.0 }
            })
            .collect();
        let moving = CtVolume::new(moving_g, SeriesKind::Contrast, voxels).unwrap();
        let out = reorient_to_reference(&moving, &reference, Interpolation::Nearest).unwrap();
        for k in 0..4 {
            for j in 0..10 {
                assert_eq!(out.at(0, j, k), AIR_HU);
                for i in 1..11 {
                    assert_eq!(out.at(i, j, k), r.at(i, j, k));
                }
            }
        }
    }

    #[test]
    fn nearest_reorientation_is_idempotent() {
        let reference = geom([12, 12, 3], [1.0, 1.0, 2.5], [0.0; 3], Orientation::IDENTITY);
        let moving_g = rigid_motion(&reference, 0.2, [6.0, 6.0, 0.0], [1.3, -0.7, 0.0]).unwrap();
        let moving = noisy_volume(moving_g);
        let once = reorient_to_reference(&moving, &reference, Interpolation::Nearest).unwrap();
        let twice = reorient_to_reference(&once, &reference, Interpolation::Nearest).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn masks_refuse_trilinear() {
        let g = geom([4, 4, 2], [1.0; 3], [0.0; 3], Orientation::IDENTITY);
        let m = SegmentationMask::new(g, MaskRegion::InnerLumen, vec![true; 32]).unwrap();
        assert!(matches!(reorient_mask(&m, &g, Interpolation::Trilinear), Err(Error::Config(_))));
        assert_eq!(reorient_mask(&m, &g, Interpolation::Nearest).unwrap(), m);
    }

    #[test]
    fn disjoint_volumes_fail() {
        let a = geom([4, 4, 2], [1.0; 3], [0.0; 3], Orientation::IDENTITY);
        let b = geom([4, 4, 2], [1.0; 3], [100.0, 0.0, 0.0], Orientation::IDENTITY);
        let v = noisy_volume(a);
        assert!(matches!(
            reorient_to_reference(&v, &b, Interpolation::Trilinear),
            Err(Error::Registration(_))
        ));
    }

    #[test]
    fn identical_grids_pair_identically() {
        let g = geom([4, 4, 5], [1.0, 1.0, 2.5], [0.0; 3], Orientation::IDENTITY);
        let p = pair_slices(&g, &g, None).unwrap();
        assert_eq!(p.len(), 5);
        for (i, pair) in p.pairs.iter().enumerate() {
            assert_eq!((pair.nc_index, pair.ct_index, pair.delta_z_mm), (i, i, 0.0));
        }
    }

    #[test]
    fn half_spacing_contrast_pairs_every_other_slice() {
        let nc = geom([4, 4, 3], [1.0, 1.0, 2.5], [0.0; 3], Orientation::IDENTITY);
        let ct = geom([4, 4, 5], [1.0, 1.0, 1.25], [0.0; 3], Orientation::IDENTITY);
        let p = pair_slices(&nc, &ct, None).unwrap();
        let idx: Vec<_> = p.pairs.iter().map(|q| (q.nc_index, q.ct_index)).collect();
        assert_eq!(idx, vec![(0, 0), (1, 2), (2, 4)]);
    }

    #[test]
    fn in_plane_rotation_keeps_pairing() {
        let nc = geom([4, 4, 4], [1.0, 1.0, 2.5], [0.0; 3], Orientation::IDENTITY);
        let ct = geom([4, 4, 4], [1.0, 1.0, 2.5], [3.0, -2.0, 5.0], Orientation::in_plane_rotation(0.25));
        let idx: Vec<_> = pair_slices(&nc, &ct, None).unwrap().pairs.iter().map(|q| (q.nc_index, q.ct_index)).collect();
        assert_eq!(idx, vec![(2, 0), (3, 1)]);
        let tilted = Orientation::new([1.0, 0.0, 0.0], [0.0, 0.6, 0.8]).unwrap();
        let ct = geom([4, 4, 4], [1.0, 1.0, 2.5], [0.0; 3], tilted);
        assert!(matches!(pair_slices(&nc, &ct, None), Err(Error::Registration(_))));
    }

    #[test]
    fn disjoint_z_grids_fail_to_pair() {
        let nc = geom([4, 4, 3], [1.0, 1.0, 2.5], [0.0; 3], Orientation::IDENTITY);
        let ct = geom([4, 4, 3], [1.0, 1.0, 2.5], [0.0, 0.0, 10.0], Orientation::IDENTITY);
        assert!(matches!(pair_slices(&nc, &ct, Some(1.25)), Err(Error::Registration(_))));
    }

    #[test]
    fn pairing_csv_has_header() {
        let g = geom([2, 2, 2], [1.0; 3], [0.0; 3], Orientation::IDENTITY);
        let p = pair_slices(&g, &g, None).unwrap();
        let mut buf = Vec::new();
        write_pairing(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("nc_index,ct_index,delta_z_mm"));
        assert_eq!(text.lines().count(), 3);
    }
}
