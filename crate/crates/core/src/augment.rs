//! Paired non-linear warps for expanding the training set.
//!
//! A warp is a sum of Gaussian bumps anchored on the outer-lumen boundary.
//! The same field deforms the non-contrast slice, the contrast slice and both
//! masks of a pair, so pairing survives augmentation.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid2, Mask2};
use crate::output::write_hu_png16;
use crate::regions::distance_to_background;
use crate::rng::{derive_seed, rng_for};
use crate::volume::AxialSlice;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    /// Every control point moves in one shared direction.
    Congruent,
    /// Each control point moves radially outward or inward, independently.
    Divergent,
}

impl WarpMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WarpMode::Congruent => "congruent",
            WarpMode::Divergent => "divergent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    /// `(row, col)` in pixels.
    pub center: [f64; 2],
    /// `(d_row, d_col)` in pixels.
    pub amplitude: [f64; 2],
    /// Gaussian σ in pixels.
    pub bandwidth: f64,
}

impl ControlPoint {
    fn norm(&self) -> f64 {
        self.amplitude[0].hypot(self.amplitude[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub control_points: Vec<ControlPoint>,
    pub mode: WarpMode,
    pub seed: u64,
}

impl WarpSpec {
    pub fn identity(mode: WarpMode, seed: u64) -> Self {
        Self {
            control_points: Vec::new(),
            mode,
            seed,
        }
    }

    /// `|a| ≤ σ/2` and `σ > 0` for every control point.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.control_points.iter().enumerate() {
            if !(p.bandwidth > 0.0 && p.bandwidth.is_finite()) {
                return Err(Error::Augmentation(format!("control point {i}: bandwidth must be > 0")));
            }
            if p.norm() > p.bandwidth / 2.0 + 1e-12 {
                return Err(Error::Augmentation(format!(
                    "control point {i}: |amplitude| {:.3} exceeds bandwidth/2 = {:.3}",
                    p.norm(),
                    p.bandwidth / 2.0
                )));
            }
        }
        Ok(())
    }

    /// `u(x) = Σ aᵢ·exp(−‖x − cᵢ‖² / 2σᵢ²)` at `(row, col)`.
    pub fn displacement(&self, x: [f64; 2]) -> [f64; 2] {
        let mut u = [0.0; 2];
        for p in &self.control_points {
            let d2 = (x[0] - p.center[0]).powi(2) + (x[1] - p.center[1]).powi(2);
            let g = (-d2 / (2.0 * p.bandwidth * p.bandwidth)).exp();
            u[0] += p.amplitude[0] * g;
            u[1] += p.amplitude[1] * g;
        }
        u
    }

    /// `det(I + ∇u)` of the forward map `x ↦ x + u(x)`.
    pub fn jacobian_det(&self, x: [f64; 2]) -> f64 {
        let mut j = [[1.0, 0.0], [0.0, 1.0]];
        for p in &self.control_points {
            let s2 = p.bandwidth * p.bandwidth;
            let d = [x[0] - p.center[0], x[1] - p.center[1]];
            let g = (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * s2)).exp();
            for (a, row) in j.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate() {
                    *v -= p.amplitude[a] * d[b] / s2 * g;
                }
            }
        }
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// True when `det J > 0` at every pixel centre of a `rows × cols` grid.
    pub fn is_fold_free(&self, rows: usize, cols: usize) -> bool {
        (0..rows).all(|r| (0..cols).all(|c| self.jacobian_det([r as f64, c as f64]) > 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for p in &mut s.control_points {
            p.amplitude = [p.amplitude[0] * factor, p.amplitude[1] * factor];
        }
        s
    }

    /// Source position `x` with `x + u(x) = y`, by fixed-point iteration.
    /// Converges because the field is a contraction under the no-fold bound.
    pub fn inverse(&self, y: [f64; 2]) -> [f64; 2] {
        let mut x = y;
        for _ in 0..50 {
            let u = self.displacement(x);
            let next = [y[0] - u[0], y[1] - u[1]];
            let step = (next[0] - x[0]).abs() + (next[1] - x[1]).abs();
            x = next;
            if step < 1e-10 {
                break;
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    pub control_points: usize,
    pub bandwidth_px: f64,
    pub min_amplitude_px: f64,
    /// Halvings tried before a folding warp is replaced by the identity.
    pub max_redraws: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            control_points: 4,
            bandwidth_px: 15.0,
            min_amplitude_px: 2.0,
            max_redraws: 8,
        }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control_points == 0 {
            return Err(Error::Config("warp needs at least one control point".into()));
        }
        if !(self.bandwidth_px > 0.0) {
            return Err(Error::Config("warp bandwidth must be > 0".into()));
        }
        if !(self.min_amplitude_px >= 0.0 && self.min_amplitude_px <= self.bandwidth_px / 2.0) {
            return Err(Error::Config(format!(
                "minimum amplitude {} must lie in [0, bandwidth/2 = {}]",
                self.min_amplitude_px,
                self.bandwidth_px / 2.0
            )));
        }
        Ok(())
    }
}

/// Boundary pixels ordered by angle about the centroid.
fn ordered_boundary(mask: &Mask2) -> Option<(Vec<[f64; 2]>, (f64, f64))> {
    let centroid = mask.centroid()?;
    let mut pts: Vec<[f64; 2]> = mask
        .boundary()
        .into_iter()
        .map(|(r, c)| [r as f64, c as f64])
        .collect();
    let angle = |p: &[f64; 2]| (p[0] - centroid.0).atan2(p[1] - centroid.1);
    pts.sort_by(|a, b| angle(a).total_cmp(&angle(b)).then(a[0].total_cmp(&b[0])).then(a[1].total_cmp(&b[1])));
    Some((pts, centroid))
}

/// Control points at equal arc-length intervals along the mask boundary,
/// starting from a seeded phase.
pub fn build_warp(mask: &Mask2, mode: WarpMode, seed: u64, config: &WarpConfig) -> Result<WarpSpec> {
    config.validate()?;
    let (boundary, centroid) =
        ordered_boundary(mask).ok_or_else(|| Error::Augmentation("empty outer-lumen mask; slice skipped".into()))?;
    let mut rng = rng_for(seed, &[]);
    let n = boundary.len();
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0.0);
    for i in 0..n {
        let (a, b) = (boundary[i], boundary[(i + 1) % n]);
        cumulative.push(cumulative[i] + (a[0] - b[0]).hypot(a[1] - b[1]));
    }
    let perimeter = cumulative[n];
    let step = perimeter / config.control_points as f64;
    let phase = if step > 0.0 { rng.random_range(0.0..step) } else { 0.0 };
    let shared = rng.random_range(0.0..std::f64::consts::TAU);
    let sigma = config.bandwidth_px;
    let mut control_points = Vec::with_capacity(config.control_points);
    for k in 0..config.control_points {
        let s = phase + k as f64 * step;
        let i = cumulative[..n].partition_point(|&c| c <= s).saturating_sub(1);
        let center = boundary[i];
        let magnitude = if sigma / 2.0 > config.min_amplitude_px {
            rng.random_range(config.min_amplitude_px..=sigma / 2.0)
        } else {
            sigma / 2.0
        };
        let direction = match mode {
            WarpMode::Congruent => [shared.sin(), shared.cos()],
            WarpMode::Divergent => {
                let (dr, dc) = (center[0] - centroid.0, center[1] - centroid.1);
                let len = dr.hypot(dc);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                if len > 0.0 {
                    [sign * dr / len, sign * dc / len]
                } else {
                    [sign, 0.0]
                }
            }
        };
        control_points.push(ControlPoint {
            center,
            amplitude: [magnitude * direction[0], magnitude * direction[1]],
            bandwidth: sigma,
        });
    }
    Ok(WarpSpec {
        control_points,
        mode,
        seed,
    })
}

/// Halve the amplitudes until the warp is fold-free on the grid.
pub fn ensure_fold_free(spec: WarpSpec, rows: usize, cols: usize, max_redraws: usize) -> WarpSpec {
    let mut s = spec;
    for _ in 0..max_redraws {
        if s.is_fold_free(rows, cols) {
            return s;
        }
        s = s.scaled(0.5);
    }
    if s.is_fold_free(rows, cols) {
        s
    } else {
        WarpSpec::identity(s.mode, s.seed)
    }
}

fn bilinear(img: &Grid2<f32>, x: [f64; 2]) -> f32 {
    let (rows, cols) = img.shape();
    let r = x[0].clamp(0.0, (rows - 1) as f64);
    let c = x[1].clamp(0.0, (cols - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
    let (fr, fc) = ((r - r0 as f64) as f32, (c - c0 as f64) as f32);
    let top = img.get(r0, c0) * (1.0 - fc) + img.get(r0, c1) * fc;
    let bottom = img.get(r1, c0) * (1.0 - fc) + img.get(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Source coordinates of every output pixel under the inverse warp.
fn source_map(spec: &WarpSpec, rows: usize, cols: usize) -> Grid2<[f64; 2]> {
    Grid2::from_fn(rows, cols, |r, c| spec.inverse([r as f64, c as f64]))
}

fn nearest<T: Copy>(grid: &Grid2<T>, x: [f64; 2], outside: T) -> T {
    let (r, c) = (x[0].round() as isize, x[1].round() as isize);
    grid.get_signed(r, c).copied().unwrap_or(outside)
}

/// Nearest-neighbour warp of any label grid; pixels mapped from outside the
/// grid take `outside`.
pub fn warp_labels<T: Copy>(labels: &Grid2<T>, spec: &WarpSpec, outside: T) -> Grid2<T> {
    let src = source_map(spec, labels.rows(), labels.cols());
    src.map(|&x| nearest(labels, x, outside))
}

/// Signed distance to the mask edge, positive inside: pixel-centre distance
/// to the nearest pixel of the other class, less half a pixel.
fn signed_distance(mask: &Mask2) -> Grid2<f32> {
    let inside = distance_to_background(mask);
    let outside = distance_to_background(&mask.map(|&m| !m));
    Grid2::from_fn(mask.rows(), mask.cols(), |r, c| {
        if *mask.get(r, c) {
            (*inside.get(r, c) - 0.5) as f32
        } else {
            (0.5 - *outside.get(r, c)) as f32
        }
    })
}

/// Mask resampled by thresholding its bilinearly interpolated signed
/// distance; exact at integer source positions and free of the stray
/// staircase pixels a nearest-neighbour lookup leaves on stretched edges.
fn warp_mask(mask: &Mask2, src: &Grid2<[f64; 2]>) -> Mask2 {
    let sdf = signed_distance(mask);
    src.map(|&x| {
        let (rows, cols) = (mask.rows() as f64, mask.cols() as f64);
        let inside_grid = x[0] > -0.5 && x[1] > -0.5 && x[0] < rows - 0.5 && x[1] < cols - 0.5;
        inside_grid && bilinear(&sdf, x) > 0.0
    })
}

/// Warp an image bilinearly and its masks through their signed distance,
/// all under one displacement field.
pub fn apply_warp(slice: &AxialSlice, masks: &[Mask2], spec: &WarpSpec) -> Result<(AxialSlice, Vec<Mask2>)> {
    spec.validate()?;
    let (rows, cols) = slice.pixels.shape();
    for m in masks {
        m.ensure_shape(rows, cols)?;
    }
    if !spec.is_fold_free(rows, cols) {
        return Err(Error::Augmentation("warp folds (det J ≤ 0 on the check grid)".into()));
    }
    if spec.control_points.is_empty() {
        return Ok((slice.clone(), masks.to_vec()));
    }
    let src = source_map(spec, rows, cols);
    let pixels = src.map(|&x| bilinear(&slice.pixels, x));
    let warped = masks.iter().map(|m| warp_mask(m, &src)).collect();
    Ok((
        AxialSlice {
            pixels,
            ..slice.clone()
        },
        warped,
    ))
}

/// One registered training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub nc: AxialSlice,
    pub ct: AxialSlice,
    pub inner: Mask2,
    pub outer: Mask2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub item_id: String,
    pub source_id: String,
    pub source_index: usize,
    /// 0 for the original, `1..=ratio` for warped copies.
    pub copy: usize,
    pub seed: Option<u64>,
    pub mode: Option<WarpMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedItem {
    pub pair: TrainingPair,
    pub provenance: Provenance,
    pub warp: Option<WarpSpec>,
}

/// Warp mode of copy `k ≥ 1`: odd copies congruent, even copies divergent.
pub fn mode_for_copy(copy: usize) -> WarpMode {
    if copy % 2 == 1 {
        WarpMode::Congruent
    } else {
        WarpMode::Divergent
    }
}

pub fn augment_pair(
    pair: &TrainingPair,
    source_index: usize,
    copy: usize,
    master_seed: u64,
    config: &WarpConfig,
) -> Result<AugmentedItem> {
    let seed = derive_seed(master_seed, &[source_index as u64, copy as u64]);
    let mode = mode_for_copy(copy);
    let (rows, cols) = pair.nc.pixels.shape();
    let spec = build_warp(&pair.outer, mode, seed, config)?;
    let spec = ensure_fold_free(spec, rows, cols, config.max_redraws);
    let (nc, nc_masks) = apply_warp(&pair.nc, &[pair.inner.clone(), pair.outer.clone()], &spec)?;
    let (ct, _) = apply_warp(&pair.ct, &[], &spec)?;
    let [inner, outer]: [Mask2; 2] = nc_masks.try_into().expect("two masks in, two out");
    let item_id = format!("{}_a{copy:02}", pair.id);
    Ok(AugmentedItem {
        pair: TrainingPair {
            id: item_id.clone(),
            nc,
            ct,
            inner,
            outer,
        },
        provenance: Provenance {
            item_id,
            source_id: pair.id.clone(),
            source_index,
            copy,
            seed: Some(seed),
            mode: Some(mode),
        },
        warp: Some(spec),
    })
}

/// Every pair followed by `ratio` warped copies, `(ratio + 1)·n` items.
/// Pairs with an empty outer mask contribute only themselves.
pub fn generate_augmented_set(
    pairs: &[TrainingPair],
    ratio: usize,
    master_seed: u64,
    config: &WarpConfig,
) -> Result<Vec<AugmentedItem>> {
    config.validate()?;
    let mut out = Vec::with_capacity(pairs.len() * (ratio + 1));
    for (i, pair) in pairs.iter().enumerate() {
        out.push(AugmentedItem {
            pair: pair.clone(),
            provenance: Provenance {
                item_id: pair.id.clone(),
                source_id: pair.id.clone(),
                source_index: i,
                copy: 0,
                seed: None,
                mode: None,
            },
            warp: None,
        });
        if pair.outer.count() == 0 {
            continue;
        }
        for copy in 1..=ratio {
            out.push(augment_pair(pair, i, copy, master_seed, config)?);
        }
    }
    Ok(out)
}

fn mask_png(path: &Path, mask: &Mask2) -> Result<()> {
    let img = image::GrayImage::from_fn(mask.cols() as u32, mask.rows() as u32, |x, y| {
        image::Luma([if *mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

/// Write each item as HU-offset PNG16 slices plus mask PNGs, and a
/// `manifest.csv` of provenance.
pub fn write_augmented_set(items: &[AugmentedItem], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let csv_err = |e: csv::Error| Error::io(&manifest, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&manifest).map_err(csv_err)?;
    w.write_record(["item_id", "source", "copy", "seed", "mode"]).map_err(csv_err)?;
    for item in items {
        let p = &item.provenance;
        write_hu_png16(&dir.join(format!("{}_nc.png", p.item_id)), &item.pair.nc.pixels)?;
        write_hu_png16(&dir.join(format!("{}_ct.png", p.item_id)), &item.pair.ct.pixels)?;
        mask_png(&dir.join(format!("{}_inner.png", p.item_id)), &item.pair.inner)?;
        mask_png(&dir.join(format!("{}_outer.png", p.item_id)), &item.pair.outer)?;
        w.write_record([
            p.item_id.clone(),
            p.source_id.clone(),
            p.copy.to_string(),
            p.seed.map_or_else(String::new, |s| s.to_string()),
            p.mode.map_or("original", WarpMode::as_str).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::disk;
    use crate::regions::{partition_regions, BACKGROUND};

    fn pair(id: &str, rows: usize) -> TrainingPair {
        let c = (rows as f64 - 1.0) / 2.0;
        let outer = disk(rows, rows, (c, c), rows as f64 / 4.0);
        let inner = disk(rows, rows, (c, c), rows as f64 / 8.0);
        let nc = Grid2::from_fn(rows, rows, |r, cc| (r * 7 + cc * 3) as f32 % 50.0);
        let ct = nc.map(|v| v + 200.0);
        TrainingPair {
            id: id.into(),
            nc: AxialSlice::new(nc, 0.0, [1.0, 1.0]),
            ct: AxialSlice::new(ct, 0.0, [1.0, 1.0]),
            inner,
            outer,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let p = pair("a", 64);
        let cfg = WarpConfig::default();
        for mode in [WarpMode::Congruent, WarpMode::Divergent] {
            assert_eq!(build_warp(&p.outer, mode, 42, &cfg).unwrap(), build_warp(&p.outer, mode, 42, &cfg).unwrap());
        }
    }

    #[test]
    fn congruent_amplitudes_are_parallel() {
        let p = pair("a", 64);
        for seed in 0..20 {
            let s = build_warp(&p.outer, WarpMode::Congruent, seed, &WarpConfig::default()).unwrap();
            assert_eq!(s.control_points.len(), 4);
            for a in &s.control_points {
                for b in &s.control_points {
                    let cross = a.amplitude[0] * b.amplitude[1] - a.amplitude[1] * b.amplitude[0];
                    assert!(cross.abs() < 1e-9);
                }
                assert!(a.norm() >= 2.0 - 1e-12 && a.norm() <= 7.5 + 1e-12);
            }
        }
    }

    #[test]
    fn divergent_draws_hit_opposing_signs() {
        let p = pair("a", 64);
        let c = p.outer.centroid().unwrap();
        let mut opposing = 0;
        for seed in 0..100 {
            let s = build_warp(&p.outer, WarpMode::Divergent, seed, &WarpConfig::default()).unwrap();
            let signs: Vec<f64> = s
                .control_points
                .iter()
                .map(|q| ((q.center[0] - c.0) * q.amplitude[0] + (q.center[1] - c.1) * q.amplitude[1]).signum())
                .collect();
            if signs.iter().any(|&x| x > 0.0) && signs.iter().any(|&x| x < 0.0) {
                opposing += 1;
            }
        }
        assert!(opposing > 0);
    }

    #[test]
    fn control_points_lie_on_boundary() {
        let p = pair("a", 64);
        let boundary = p.outer.boundary();
        let s = build_warp(&p.outer, WarpMode::Congruent, 3, &WarpConfig::default()).unwrap();
        for q in &s.control_points {
            assert!(boundary.contains(&(q.center[0] as usize, q.center[1] as usize)));
        }
    }

    #[test]
    fn empty_mask_is_skipped() {
        let m = Grid2::filled(8, 8, false);
        assert!(matches!(
            build_warp(&m, WarpMode::Congruent, 0, &WarpConfig::default()),
            Err(Error::Augmentation(_))
        ));
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let p = pair("a", 32);
        let spec = build_warp(&p.outer, WarpMode::Divergent, 1, &WarpConfig::default()).unwrap().scaled(0.0);
        let (img, masks) = apply_warp(&p.nc, std::slice::from_ref(&p.outer), &spec).unwrap();
        assert_eq!(img, p.nc);
        assert_eq!(masks[0], p.outer);
    }

    #[test]
    fn far_pixels_do_not_move() {
        let spec = WarpSpec {
            control_points: vec![ControlPoint {
                center: [0.0, 0.0],
                amplitude: [3.0, 0.0],
                bandwidth: 5.0,
            }],
            mode: WarpMode::Congruent,
            seed: 0,
        };
        // 3·exp(−d²/2σ²) < 0.01 once d > σ·√(2 ln 300)
        let d = 5.0 * (2.0 * 300f64.ln()).sqrt() + 0.1;
        let u = spec.displacement([d, 0.0]);
        assert!(u[0].hypot(u[1]) < 0.01);
        let x = spec.inverse([d, 0.0]);
        assert!((x[0] - d).abs() < 0.01);
    }

    #[test]
    fn inverse_undoes_forward_map() {
        let p = pair("a", 64);
        let s = build_warp(&p.outer, WarpMode::Divergent, 9, &WarpConfig::default()).unwrap();
        for y in [[10.0, 12.0], [31.5, 48.0], [40.0, 20.0]] {
            let x = s.inverse(y);
            let u = s.displacement(x);
            assert!((x[0] + u[0] - y[0]).abs() < 1e-8 && (x[1] + u[1] - y[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let p = pair("a", 64);
        let s = build_warp(&p.outer, WarpMode::Congruent, 5, &WarpConfig::default()).unwrap();
        let x = [30.0, 17.0];
        let h = 1e-5;
        let f = |x: [f64; 2]| {
            let u = s.displacement(x);
            [x[0] + u[0], x[1] + u[1]]
        };
        let col = |k: usize| {
            let mut a = x;
            let mut b = x;
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (f(a), f(b));
            [(fa[0] - fb[0]) / (2.0 * h), (fa[1] - fb[1]) / (2.0 * h)]
        };
        let (c0, c1) = (col(0), col(1));
        let det = c0[0] * c1[1] - c1[0] * c0[1];
        assert!((det - s.jacobian_det(x)).abs() < 1e-6);
    }

    #[test]
    fn oversized_amplitude_is_rejected_and_folds_are_halved() {
        let spec = WarpSpec {
            control_points: vec![ControlPoint {
                center: [16.0, 16.0],
                amplitude: [9.0, 0.0],
                bandwidth: 4.0,
            }],
            mode: WarpMode::Congruent,
            seed: 0,
        };
        let p = pair("a", 32);
        assert!(apply_warp(&p.nc, &[], &spec).is_err());
        assert!(!spec.is_fold_free(32, 32));
        let fixed = ensure_fold_free(spec, 32, 32, 8);
        assert!(fixed.is_fold_free(32, 32));
        assert!(fixed.control_points[0].amplitude[0] < 9.0);
    }

    #[test]
    fn warped_masks_stay_connected() {
        let p = pair("a", 64);
        let cfg = WarpConfig::default();
        for seed in 0..100 {
            let mode = mode_for_copy(seed as usize % 2 + 1);
            let s = ensure_fold_free(build_warp(&p.outer, mode, seed, &cfg).unwrap(), 64, 64, 8);
            assert!(s.is_fold_free(64, 64));
            let (_, m) = apply_warp(&p.nc, &[p.outer.clone(), p.inner.clone()], &s).unwrap();
            assert_eq!(m[0].components4(), 1, "seed {seed}");
            assert_eq!(m[1].components4(), 1, "seed {seed}");
        }
    }

    #[test]
    fn dataset_counts_and_provenance() {
        let pairs: Vec<_> = (0..3).map(|i| pair(&format!("s{i}"), 32)).collect();
        let cfg = WarpConfig {
            bandwidth_px: 8.0,
            ..Default::default()
        };
        let set = generate_augmented_set(&pairs, 10, 7, &cfg).unwrap();
        assert_eq!(set.len(), 33);
        assert!(generate_augmented_set(&pairs, 0, 7, &cfg).unwrap().iter().all(|i| i.provenance.copy == 0));
        for item in &set {
            let p = &item.provenance;
            assert_eq!(p.source_id, pairs[p.source_index].id);
            assert_eq!(p.seed.is_some(), p.copy > 0);
        }
        assert_eq!(set, generate_augmented_set(&pairs, 10, 7, &cfg).unwrap());
    }

    /// Label disagreement between partition-then-warp and warp-then-partition,
    /// as a fraction of warped aorta pixels.
    fn commute_gap(p: &TrainingPair, item: &AugmentedItem) -> f64 {
        let warp = item.warp.as_ref().unwrap();
        let before = partition_regions(&p.inner, &p.outer, 0.8).unwrap();
        let warped_labels = warp_labels(&before.labels, warp, BACKGROUND);
        let after = partition_regions(&item.pair.inner, &item.pair.outer, 0.8).unwrap();
        let disagree = after
            .labels
            .as_slice()
            .iter()
            .zip(warped_labels.as_slice())
            .filter(|(a, b)| a != b)
            .count();
        disagree as f64 / after.aorta().count() as f64
    }

    // Erosion is area based, so a warp that changes local area moves core
    // edges differently from the labels it carries. Checked at full 256×256
    // resolution, where the default σ is local to the vessel.
    #[test]
    fn paired_warp_commutes_with_partition() {
        let p = pair("a", 256);
        let mut divergent = Vec::new();
        for copy in 1..=20 {
            let item = augment_pair(&p, 0, copy, 99, &WarpConfig::default()).unwrap();
            let gap = commute_gap(&p, &item);
            match mode_for_copy(copy) {
                WarpMode::Congruent => assert!(gap < 0.02, "copy {copy}: {gap}"),
                WarpMode::Divergent => divergent.push(gap),
            }
        }
        divergent.sort_by(f64::total_cmp);
        assert!(divergent[divergent.len() / 2] < 0.02, "{divergent:?}");
    }

    #[test]
    fn writes_manifest_and_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![pair("s0", 32)];
        let cfg = WarpConfig {
            bandwidth_px: 8.0,
            ..Default::default()
        };
        let set = generate_augmented_set(&pairs, 2, 1, &cfg).unwrap();
        write_augmented_set(&set, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("s0_a01,s0,1,"));
        let back = crate::output::read_hu_png16(&dir.path().join("s0_a02_ct.png")).unwrap();
        for (a, b) in back.as_slice().iter().zip(set[2].pair.ct.pixels.as_slice()) {
            assert!((a - b).abs() <= 0.5, "{a} vs {b}");
        }
    }
}
