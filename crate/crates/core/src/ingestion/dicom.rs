use std::fs;
use std::path::{Path, PathBuf};

use dicom_core::value::PrimitiveValue;
use dicom_core::Tag;
use dicom_dictionary_std::tags;
use dicom_object::{open_file, DefaultDicomObject};

use crate::volume::{dot, CtVolume, Geometry, Orientation, SeriesKind};
use crate::{Error, Result};

/// Relative deviation from the median inter-slice gap that counts as a
/// dropped slice.
const GAP_TOLERANCE: f64 = 0.10;

struct Instance {
    path: PathBuf,
    position: [f64; 3],
    orientation: Orientation,
    pixel_spacing: [f64; 2],
    rows: usize,
    cols: usize,
    hu: Vec<f32>,
}

fn meta_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Metadata {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn floats(obj: &DefaultDicomObject, path: &Path, tag: Tag, name: &str, n: usize) -> Result<Vec<f64>> {
    let elem = obj
        .element(tag)
        .map_err(|_| meta_err(path, format!("missing {name}")))?;
    let v = elem
        .value()
        .to_multi_float64()
        .map_err(|e| meta_err(path, format!("{name}: {e}")))?;
    if v.len() != n {
        return Err(meta_err(path, format!("{name}: expected {n} values, found {}", v.len())));
    }
    Ok(v)
}

fn int(obj: &DefaultDicomObject, path: &Path, tag: Tag, name: &str) -> Result<i64> {
    obj.element(tag)
        .map_err(|_| meta_err(path, format!("missing {name}")))?
        .value()
        .to_int::<i64>()
        .map_err(|e| meta_err(path, format!("{name}: {e}")))
}

fn read_instance(path: &Path) -> Result<Instance> {
    let obj = open_file(path).map_err(|e| meta_err(path, format!("not a readable DICOM file: {e}")))?;
    let pos = floats(&obj, path, tags::IMAGE_POSITION_PATIENT, "Image Position (Patient)", 3)?;
    let ori = floats(&obj, path, tags::IMAGE_ORIENTATION_PATIENT, "Image Orientation (Patient)", 6)?;
    // (row spacing, column spacing) = (dy, dx)
    let ps = floats(&obj, path, tags::PIXEL_SPACING, "Pixel Spacing", 2)?;
    let slope = floats(&obj, path, tags::RESCALE_SLOPE, "Rescale Slope", 1)?[0];
    let intercept = floats(&obj, path, tags::RESCALE_INTERCEPT, "Rescale Intercept", 1)?[0];
    let rows = int(&obj, path, tags::ROWS, "Rows")? as usize;
    let cols = int(&obj, path, tags::COLUMNS, "Columns")? as usize;
    let bits = int(&obj, path, tags::BITS_ALLOCATED, "Bits Allocated").unwrap_or(16);
    let signed = int(&obj, path, tags::PIXEL_REPRESENTATION, "Pixel Representation").unwrap_or(0) == 1;
    if slope == 0.0 {
        return Err(meta_err(path, "Rescale Slope must be nonzero"));
    }
    let orientation = Orientation::new([ori[0], ori[1], ori[2]], [ori[3], ori[4], ori[5]])
        .map_err(|e| meta_err(path, e.to_string()))?;

    let pixel = obj
        .element(tags::PIXEL_DATA)
        .map_err(|_| meta_err(path, "missing Pixel Data"))?;
    let prim = pixel
        .value()
        .primitive()
        .ok_or_else(|| meta_err(path, "encapsulated (compressed) pixel data is not supported"))?;
    let raw: Vec<f64> = match (bits, prim) {
        (16, PrimitiveValue::U16(v)) if signed => v.iter().map(|&x| x as i16 as f64).collect(),
        (16, PrimitiveValue::U16(v)) => v.iter().map(|&x| x as f64).collect(),
        (16, PrimitiveValue::I16(v)) => v.iter().map(|&x| x as f64).collect(),
        (16, PrimitiveValue::U8(b)) => b
            .chunks_exact(2)
            .map(|c| {
                let u = u16::from_le_bytes([c[0], c[1]]);
                if signed { u as i16 as f64 } else { u as f64 }
            })
            .collect(),
        (8, PrimitiveValue::U8(b)) => b.iter().map(|&x| x as f64).collect(),
        (b, _) => return Err(meta_err(path, format!("unsupported pixel layout ({b} bits allocated)"))),
    };
    if raw.len() < rows * cols {
        return Err(meta_err(
            path,
            format!("pixel data holds {} samples, expected {}", raw.len(), rows * cols),
        ));
    }
    let hu = raw[..rows * cols]
        .iter()
        .map(|&v| (v * slope + intercept) as f32)
        .collect();
    Ok(Instance {
        path: path.to_path_buf(),
        position: [pos[0], pos[1], pos[2]],
        orientation,
        pixel_spacing: [ps[0], ps[1]],
        rows,
        cols,
        hu,
    })
}

/// Load every regular file in `directory` as one axial series.
pub fn load_dicom_series(directory: &Path, kind: SeriesKind) -> Result<CtVolume> {
    let mut files: Vec<PathBuf> = fs::read_dir(directory)
        .map_err(|e| Error::io(directory, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    load_dicom_files(&files, kind)
}

/// Assemble a volume from single-frame instances given in any order.
pub fn load_dicom_files(files: &[PathBuf], kind: SeriesKind) -> Result<CtVolume> {
    if files.len() < 2 {
        return Err(Error::InconsistentSeries(format!(
            "need at least 2 instances, found {}",
            files.len()
        )));
    }
    let mut instances = files
        .iter()
        .map(|p| read_instance(p))
        .collect::<Result<Vec<_>>>()?;

    let first = &instances[0];
    let (orientation, rows, cols, ps) = (first.orientation, first.rows, first.cols, first.pixel_spacing);
    for inst in &instances[1..] {
        if !inst.orientation.approx_eq(&orientation, 1e-4) {
            return Err(Error::InconsistentSeries(format!(
                "{} has orientation {:?}, expected {:?}",
                inst.path.display(),
                inst.orientation,
                orientation
            )));
        }
        if (inst.rows, inst.cols) != (rows, cols) {
            return Err(Error::InconsistentSeries(format!(
                "{} is {}x{}, expected {rows}x{cols}",
                inst.path.display(),
                inst.rows,
                inst.cols
            )));
        }
        if (inst.pixel_spacing[0] - ps[0]).abs() > 1e-6 || (inst.pixel_spacing[1] - ps[1]).abs() > 1e-6 {
            return Err(Error::InconsistentSeries(format!(
                "{} has pixel spacing {:?}, expected {ps:?}",
                inst.path.display(),
                inst.pixel_spacing
            )));
        }
    }

    let normal = orientation.normal();
    let depth = |i: &Instance| dot(i.position, normal);
    instances.sort_by(|a, b| depth(a).total_cmp(&depth(b)));
    let positions: Vec<f64> = instances.iter().map(depth).collect();
    let mut gaps: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let unsorted_gaps = gaps.clone();
    gaps.sort_by(f64::total_cmp);
    let median = if gaps.len() % 2 == 1 {
        gaps[gaps.len() / 2]
    } else {
        0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2])
    };
    if median <= 0.0 {
        return Err(Error::InconsistentSeries("instances share a slice position".into()));
    }
    for (k, &gap) in unsorted_gaps.iter().enumerate() {
        if (gap - median).abs() > GAP_TOLERANCE * median {
            return Err(Error::MissingSlice {
                gap,
                median,
                before: positions[k],
                after: positions[k + 1],
            });
        }
    }

    let geometry = Geometry::new(
        [cols, rows, instances.len()],
        [ps[1], ps[0], median],
        instances[0].position,
        orientation,
    )?;
    let mut voxels = Vec::with_capacity(geometry.voxel_count());
    for inst in instances {
        voxels.extend(inst.hu);
    }
    CtVolume::new(geometry, kind, voxels)
}
