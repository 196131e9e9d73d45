use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::volume::{CtVolume, Geometry, MaskRegion, Orientation, SegmentationMask, SeriesKind};
use crate::{Error, Result};

/// Parsed `.volh` header.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleHeader {
    pub geometry: Geometry,
    /// `non_contrast`, `contrast`, `inner_lumen` or `outer_lumen`.
    pub kind: String,
    pub slope: f64,
    pub intercept: f64,
}

/// `(payload, header)` paths for a bundle name. A trailing `.vol` or `.volh`
/// extension on `path` is ignored.
pub fn bundle_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("vol") | Some("volh") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut vol = base.clone().into_os_string();
    vol.push(".vol");
    let mut volh = base.into_os_string();
    volh.push(".volh");
    (PathBuf::from(vol), PathBuf::from(volh))
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_header(h: &BundleHeader) -> String {
    let g = &h.geometry;
    let o = g.orientation;
    let mut s = String::new();
    let _ = writeln!(s, "dims = {} {} {}", g.dims[0], g.dims[1], g.dims[2]);
    let _ = writeln!(s, "spacing = {}", join(&g.spacing));
    let _ = writeln!(s, "origin = {}", join(&g.origin));
    let _ = writeln!(
        s,
        "orientation = {}",
        join(&[o.row(), o.col()].concat())
    );
    let _ = writeln!(s, "kind = {}", h.kind);
    let _ = writeln!(s, "slope = {}", h.slope);
    let _ = writeln!(s, "intercept = {}", h.intercept);
    s
}

fn write_bundle(path: &Path, header: &BundleHeader, payload: impl Iterator<Item = f32>) -> Result<()> {
    let (vol, volh) = bundle_paths(path);
    if let Some(parent) = vol.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = payload.flat_map(f32::to_le_bytes).collect();
    fs::write(&vol, bytes).map_err(|e| Error::io(&vol, e))?;
    fs::write(&volh, render_header(header)).map_err(|e| Error::io(&volh, e))?;
    Ok(())
}

pub fn save_volume_bundle(volume: &CtVolume, path: &Path) -> Result<()> {
    let header = BundleHeader {
        geometry: *volume.geometry(),
        kind: volume.kind().as_str().to_string(),
        slope: 1.0,
        intercept: 0.0,
    };
    write_bundle(path, &header, volume.voxels().iter().copied())
}

pub fn save_mask_bundle(mask: &SegmentationMask, path: &Path) -> Result<()> {
    let header = BundleHeader {
        geometry: *mask.geometry(),
        kind: mask.region().as_str().to_string(),
        slope: 1.0,
        intercept: 0.0,
    };
    write_bundle(
        path,
        &header,
        mask.labels().iter().map(|&b| if b { 1.0 } else { 0.0 }),
    )
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::CorruptBundle {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_floats(path: &Path, key: &str, value: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| corrupt(path, format!("{key}: {e}")))?;
    if v.len() != n {
        return Err(corrupt(path, format!("{key}: expected {n} values, found {}", v.len())));
    }
    Ok(v)
}

pub fn read_header(path: &Path) -> Result<BundleHeader> {
    let (_, volh) = bundle_paths(path);
    let text = fs::read_to_string(&volh).map_err(|e| Error::io(&volh, e))?;
    let (mut dims, mut spacing, mut origin, mut orientation) = (None, None, None, None);
    let (mut kind, mut slope, mut intercept) = (None, 1.0, 0.0);
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| corrupt(&volh, format!("malformed line {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dims" => {
                let d: Vec<usize> = value
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| corrupt(&volh, format!("dims: {e}")))?;
                if d.len() != 3 {
                    return Err(corrupt(&volh, "dims: expected 3 values"));
                }
                dims = Some([d[0], d[1], d[2]]);
            }
            "spacing" => spacing = Some(parse_floats(&volh, key, value, 3)?),
            "origin" => origin = Some(parse_floats(&volh, key, value, 3)?),
            "orientation" => orientation = Some(parse_floats(&volh, key, value, 6)?),
            "kind" => kind = Some(value.to_string()),
            "slope" => slope = parse_floats(&volh, key, value, 1)?[0],
            "intercept" => intercept = parse_floats(&volh, key, value, 1)?[0],
            _ => {}
        }
    }
    let missing = |k: &str| corrupt(&volh, format!("missing key {k:?}"));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let s = spacing.ok_or_else(|| missing("spacing"))?;
    let o = origin.ok_or_else(|| missing("origin"))?;
    let r = orientation.ok_or_else(|| missing("orientation"))?;
    let orientation = Orientation::new([r[0], r[1], r[2]], [r[3], r[4], r[5]])?;
    let geometry = Geometry::new(dims, [s[0], s[1], s[2]], [o[0], o[1], o[2]], orientation)?;
    if slope == 0.0 || !slope.is_finite() {
        return Err(corrupt(&volh, "slope must be finite and nonzero"));
    }
    Ok(BundleHeader {
        geometry,
        kind: kind.ok_or_else(|| missing("kind"))?,
        slope,
        intercept,
    })
}

fn read_payload(path: &Path, header: &BundleHeader) -> Result<Vec<f32>> {
    let (vol, _) = bundle_paths(path);
    let bytes = fs::read(&vol).map_err(|e| Error::io(&vol, e))?;
    let expected = header.geometry.voxel_count() * 4;
    if bytes.len() != expected {
        return Err(corrupt(
            &vol,
            format!(
                "payload is {} bytes but header dims {:?} require {expected}",
                bytes.len(),
                header.geometry.dims
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn load_volume_bundle(path: &Path) -> Result<CtVolume> {
    let header = read_header(path)?;
    let kind = SeriesKind::parse(&header.kind)
        .ok_or_else(|| corrupt(path, format!("not a CT series kind: {:?}", header.kind)))?;
    let mut voxels = read_payload(path, &header)?;
    if header.slope != 1.0 || header.intercept != 0.0 {
        for v in &mut voxels {
            *v = (*v as f64 * header.slope + header.intercept) as f32;
        }
    }
    CtVolume::new(header.geometry, kind, voxels)
}

/// Load a binary mask bundle and check it annotates `grid`'s voxel grid.
pub fn load_mask(path: &Path, grid: &CtVolume) -> Result<SegmentationMask> {
    let header = read_header(path)?;
    let region = MaskRegion::parse(&header.kind)
        .ok_or_else(|| corrupt(path, format!("not a mask kind: {:?}", header.kind)))?;
    if header.geometry.dims != grid.geometry().dims {
        return Err(Error::GridMismatch {
            expected: grid.geometry().dims.to_vec(),
            found: header.geometry.dims.to_vec(),
        });
    }
    let payload = read_payload(path, &header)?;
    let labels = payload.into_iter().map(|v| v != 0.0).collect();
    SegmentationMask::new(*grid.geometry(), region, labels)
}
