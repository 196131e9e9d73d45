use std::path::{Path, PathBuf};

use dicom_core::value::PrimitiveValue;
use dicom_core::{DataElement, VR};
use dicom_dictionary_std::{tags, uids};
use dicom_object::{FileMetaTableBuilder, InMemDicomObject};

use nc2c_core::ingestion::{load_dicom_files, load_dicom_series};
use nc2c_core::{Error, SeriesKind};

struct Fixture {
    position: [f64; 3],
    row: [f64; 3],
    col: [f64; 3],
    rows: u16,
    cols: u16,
    slope: f64,
    intercept: f64,
    signed: bool,
    stored: Vec<u16>,
    with_position: bool,
}

impl Fixture {
    fn axial(z: f64, fill: u16) -> Self {
        Self {
            position: [-10.0, -20.0, z],
            row: [1.0, 0.0, 0.0],
            col: [0.0, 1.0, 0.0],
            rows: 3,
            cols: 4,
            slope: 1.0,
            intercept: -1024.0,
            signed: false,
            stored: (0..12).map(|i| fill + i).collect(),
            with_position: true,
        }
    }

    fn write(&self, path: &Path) {
        let ds = |v: &[f64]| {
            PrimitiveValue::from(v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("\\"))
        };
        let mut obj = InMemDicomObject::new_empty();
        obj.put(DataElement::new(tags::SOP_CLASS_UID, VR::UI, PrimitiveValue::from(uids::CT_IMAGE_STORAGE)));
        obj.put(DataElement::new(tags::SOP_INSTANCE_UID, VR::UI, PrimitiveValue::from("1.2.3.4.5")));
        if self.with_position {
            obj.put(DataElement::new(tags::IMAGE_POSITION_PATIENT, VR::DS, ds(&self.position)));
        }
        let ori = [self.row, self.col].concat();
        obj.put(DataElement::new(tags::IMAGE_ORIENTATION_PATIENT, VR::DS, ds(&ori)));
        obj.put(DataElement::new(tags::PIXEL_SPACING, VR::DS, ds(&[0.8, 0.6])));
        obj.put(DataElement::new(tags::RESCALE_SLOPE, VR::DS, ds(&[self.slope])));
        obj.put(DataElement::new(tags::RESCALE_INTERCEPT, VR::DS, ds(&[self.intercept])));
        obj.put(DataElement::new(tags::ROWS, VR::US, PrimitiveValue::from(self.rows)));
        obj.put(DataElement::new(tags::COLUMNS, VR::US, PrimitiveValue::from(self.cols)));
        obj.put(DataElement::new(tags::BITS_ALLOCATED, VR::US, PrimitiveValue::from(16u16)));
        obj.put(DataElement::new(tags::BITS_STORED, VR::US, PrimitiveValue::from(16u16)));
        obj.put(DataElement::new(tags::HIGH_BIT, VR::US, PrimitiveValue::from(15u16)));
        obj.put(DataElement::new(tags::SAMPLES_PER_PIXEL, VR::US, PrimitiveValue::from(1u16)));
        obj.put(DataElement::new(
            tags::PIXEL_REPRESENTATION,
            VR::US,
            PrimitiveValue::from(self.signed as u16),
        ));
        obj.put(DataElement::new(
            tags::PIXEL_DATA,
            VR::OW,
            PrimitiveValue::U16(self.stored.clone().into()),
        ));
        let file = obj
            .with_meta(FileMetaTableBuilder::new().transfer_syntax(uids::EXPLICIT_VR_LITTLE_ENDIAN))
            .unwrap();
        file.write_to_file(path).unwrap();
    }
}

fn write_all(dir: &Path, fixtures: &[Fixture]) -> Vec<PathBuf> {
    fixtures
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(format!("im{i:03}.dcm"));
            f.write(&p);
            p
        })
        .collect()
}

#[test]
fn uniform_stack_has_median_spacing() {
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &[Fixture::axial(0.0, 1000), Fixture::axial(2.5, 1100), Fixture::axial(5.0, 1200)]);
    let v = load_dicom_series(dir.path(), SeriesKind::NonContrast).unwrap();
    let g = v.geometry();
    assert_eq!(g.dims, [4, 3, 3]);
    assert_eq!(g.spacing, [0.6, 0.8, 2.5]);
    assert_eq!(g.origin, [-10.0, -20.0, 0.0]);
    // stored 1100 + i rescaled by (1, −1024)
    assert_eq!(v.at(1, 0, 1), 77.0);
    assert_eq!(v.at(3, 2, 2), 1200.0 + 11.0 - 1024.0);
}

#[test]
fn shuffled_files_give_the_same_volume() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = write_all(
        dir.path(),
        &[Fixture::axial(5.0, 1), Fixture::axial(0.0, 2), Fixture::axial(7.5, 3), Fixture::axial(2.5, 4)],
    );
    let a = load_dicom_files(&files, SeriesKind::Contrast).unwrap();
    files.reverse();
    let b = load_dicom_files(&files, SeriesKind::Contrast).unwrap();
    assert_eq!(a, b);
    // sorting is a permutation of whole slices
    assert_eq!(a.slice_plane(0)[0], 2.0 - 1024.0);
    assert_eq!(a.slice_plane(3)[0], 3.0 - 1024.0);
}

#[test]
fn dropped_slice_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &[Fixture::axial(0.0, 1), Fixture::axial(2.5, 1), Fixture::axial(7.5, 1), Fixture::axial(10.0, 1)]);
    match load_dicom_series(dir.path(), SeriesKind::NonContrast) {
        Err(Error::MissingSlice { gap, median, .. }) => assert_eq!((gap, median), (5.0, 2.5)),
        other => panic!("expected missing slice, got {other:?}"),
    }
}

#[test]
fn three_slices_with_one_gap_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &[Fixture::axial(0.0, 1), Fixture::axial(2.5, 1), Fixture::axial(7.5, 1)]);
    assert!(matches!(
        load_dicom_series(dir.path(), SeriesKind::NonContrast),
        Err(Error::MissingSlice { .. })
    ));
}

#[test]
fn mixed_orientations_are_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    let mut tilted = Fixture::axial(2.5, 1);
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    tilted.row = [c, s, 0.0];
    tilted.col = [-s, c, 0.0];
    write_all(dir.path(), &[Fixture::axial(0.0, 1), tilted, Fixture::axial(5.0, 1)]);
    assert!(matches!(
        load_dicom_series(dir.path(), SeriesKind::NonContrast),
        Err(Error::InconsistentSeries(_))
    ));
}

#[test]
fn missing_pose_is_a_metadata_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = Fixture::axial(2.5, 1);
    bad.with_position = false;
    write_all(dir.path(), &[Fixture::axial(0.0, 1), bad]);
    match load_dicom_series(dir.path(), SeriesKind::NonContrast) {
        Err(Error::Metadata { message, .. }) => assert!(message.contains("Image Position")),
        other => panic!("expected metadata error, got {other:?}"),
    }
}

#[test]
fn single_instance_is_not_a_series() {
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &[Fixture::axial(0.0, 1)]);
    assert!(load_dicom_series(dir.path(), SeriesKind::NonContrast).is_err());
}

#[test]
fn signed_pixels_and_rescale() {
    let dir = tempfile::tempdir().unwrap();
    let mut fx: Vec<Fixture> = (0..2).map(|k| Fixture::axial(k as f64 * 3.0, 0)).collect();
    for f in &mut fx {
        f.signed = true;
        f.slope = 2.0;
        f.intercept = 10.0;
        f.stored = (0..12).map(|i| (-(i as i16) * 100) as u16).collect();
    }
    write_all(dir.path(), &fx);
    let v = load_dicom_series(dir.path(), SeriesKind::NonContrast).unwrap();
    assert_eq!(v.at(0, 0, 0), 10.0);
    assert_eq!(v.at(3, 2, 1), -1100.0 * 2.0 + 10.0);
}

#[test]
fn oblique_series_sorts_along_its_normal() {
    let dir = tempfile::tempdir().unwrap();
    // row = x, col = (0, cos, sin): the normal is (0, −sin, cos)
    let (c, s) = (0.5f64.cos(), 0.5f64.sin());
    let n = [0.0, -s, c];
    let fx: Vec<Fixture> = [2usize, 0, 1]
        .iter()
        .map(|&k| {
            let mut f = Fixture::axial(0.0, k as u16 * 10);
            f.col = [0.0, c, s];
            f.position = [1.0 + n[0] * 1.5 * k as f64, 2.0 + n[1] * 1.5 * k as f64, 3.0 + n[2] * 1.5 * k as f64];
            f
        })
        .collect();
    write_all(dir.path(), &fx);
    let v = load_dicom_series(dir.path(), SeriesKind::NonContrast).unwrap();
    assert!((v.geometry().spacing[2] - 1.5).abs() < 1e-9);
    assert_eq!(v.geometry().origin, [1.0, 2.0, 3.0]);
    for k in 0..3 {
        assert_eq!(v.at(0, 0, k), (k * 10) as f32 - 1024.0);
    }
}
