//! Fidelity of generated contrast slices against the acquired contrast
//! series, and isosurface meshes for 3-D inspection.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid2, Mask2};
use crate::output::write_line_plot_png;
use crate::regions::{Region, RegionPartition};
use crate::volume::{CtVolume, Window};
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const DEFAULT_ENHANCEMENT_HU: f32 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub window: Window,
    /// Lumen is `HU ≥ threshold` inside the outer mask.
    pub enhancement_threshold_hu: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window: Window::default(),
            enhancement_threshold_hu: DEFAULT_ENHANCEMENT_HU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionalMean {
    pub generated: Option<f64>,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub patient: String,
    pub slice: usize,
    pub mae: f64,
    pub psnr: f64,
    pub lumen_dice: f64,
    /// Indexed like [`Region::ALL`].
    pub regional: [RegionalMean; 3],
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks agree perfectly.
pub fn dice(a: &Mask2, b: &Mask2) -> Result<f64> {
    b.ensure_shape(a.rows(), a.cols())?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * a.and(b).count() as f64 / (na + nb) as f64)
}

/// Mean absolute difference, optionally restricted to `mask`.
pub fn mae(a: &Grid2<f32>, b: &Grid2<f32>, mask: Option<&Mask2>) -> Result<f64> {
    b.ensure_shape(a.rows(), a.cols())?;
    if let Some(m) = mask {
        m.ensure_shape(a.rows(), a.cols())?;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if mask.is_none_or(|m| m.as_slice()[i]) {
            sum += (*x as f64 - *y as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// `10·log10(peak² / MSE)` over the whole slice, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &Grid2<f32>, b: &Grid2<f32>, peak: f64) -> Result<f64> {
    b.ensure_shape(a.rows(), a.cols())?;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn region_mean(img: &Grid2<f32>, labels: &Grid2<u8>, label: u8) -> Option<f64> {
    let (sum, n) = img
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .filter(|(_, &l)| l == label)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + *v as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn slice_metrics(
    patient: &str,
    slice: usize,
    generated: &Grid2<f32>,
    truth: &Grid2<f32>,
    partition: &RegionPartition,
    config: &EvalConfig,
) -> Result<SliceReport> {
    let (rows, cols) = truth.shape();
    generated.ensure_shape(rows, cols)?;
    partition.labels.ensure_shape(rows, cols)?;
    let aorta = partition.aorta();
    let t = config.enhancement_threshold_hu;
    let lumen = |img: &Grid2<f32>| {
        Grid2::from_fn(rows, cols, |r, c| *aorta.get(r, c) && *img.get(r, c) >= t)
    };
    let regional = Region::ALL.map(|r| RegionalMean {
        generated: region_mean(generated, &partition.labels, r.label()),
        truth: region_mean(truth, &partition.labels, r.label()),
    });
    Ok(SliceReport {
        patient: patient.to_string(),
        slice,
        mae: mae(generated, truth, Some(&aorta))?,
        psnr: psnr(generated, truth, config.window.span() as f64)?,
        lumen_dice: dice(&lumen(generated), &lumen(truth))?,
        regional,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::io("csv", std::io::Error::other(e))
}

pub fn write_slice_reports<W: Write>(reports: &[SliceReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient", "slice", "mae", "psnr", "lumen_dice"];
    header.extend(METRICS[3..].iter().copied());
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut row = vec![
            r.patient.clone(),
            r.slice.to_string(),
            format!("{:.6}", r.mae),
            format!("{:.6}", r.psnr),
            format!("{:.6}", r.lumen_dice),
        ];
        for m in &r.regional {
            row.push(opt(m.generated));
            row.push(opt(m.truth));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("csv", e))
}

/// Summary metric columns, in CSV order.
pub const METRICS: [&str; 9] = [
    "mae",
    "psnr",
    "lumen_dice",
    "lumen_generated_hu",
    "lumen_truth_hu",
    "interface_generated_hu",
    "interface_truth_hu",
    "thrombus_generated_hu",
    "thrombus_truth_hu",
];

fn metric_values(r: &SliceReport) -> [Option<f64>; 9] {
    let g = |k: usize| r.regional[k].generated;
    let t = |k: usize| r.regional[k].truth;
    [Some(r.mae), Some(r.psnr), Some(r.lumen_dice), g(0), t(0), g(1), t(1), g(2), t(2)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Patient id, or `cohort` for the pooled row.
    pub group: String,
    pub slices: usize,
    /// `(mean, sample sd)` per entry of [`METRICS`]; sd is 0 for one value.
    pub stats: [Option<(f64, f64)>; 9],
}

impl SummaryRow {
    pub fn metric(&self, name: &str) -> Option<(f64, f64)> {
        METRICS.iter().position(|m| *m == name).and_then(|i| self.stats[i])
    }
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

fn summarize(group: String, reports: &[&SliceReport]) -> SummaryRow {
    let columns: Vec<[Option<f64>; 9]> = reports.iter().map(|r| metric_values(r)).collect();
    let stats = std::array::from_fn(|k| {
        let vals: Vec<f64> = columns.iter().filter_map(|c| c[k]).collect();
        mean_sd(&vals)
    });
    SummaryRow {
        group,
        slices: reports.len(),
        stats,
    }
}

/// One row per patient in first-seen order, then the pooled `cohort` row.
pub fn cohort_report(reports: &[SliceReport]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no slice reports to summarize".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.patient.as_str()) {
            order.push(&r.patient);
        }
    }
    let mut rows: Vec<SummaryRow> = order
        .iter()
        .map(|p| {
            let mine: Vec<&SliceReport> = reports.iter().filter(|r| r.patient == *p).collect();
            summarize(p.to_string(), &mine)
        })
        .collect();
    rows.push(summarize("cohort".into(), &reports.iter().collect::<Vec<_>>()));
    Ok(rows)
}

pub fn summary_header() -> Vec<String> {
    let mut h = vec!["group".to_string(), "slices".to_string()];
    for m in METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_sd"));
    }
    h
}

pub fn write_cohort_report<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(summary_header()).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.group.clone(), r.slices.to_string()];
        for s in &r.stats {
            rec.push(opt(s.map(|s| s.0)));
            rec.push(opt(s.map(|s| s.1)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("csv", e))
}

/// Per-patient MAE and generated lumen / thrombus HU as line series.
pub fn write_cohort_plot(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let patients: Vec<&SummaryRow> = rows.iter().filter(|r| r.group != "cohort").collect();
    let series: Vec<Vec<f64>> = ["mae", "lumen_generated_hu", "thrombus_generated_hu"]
        .iter()
        .map(|m| patients.iter().map(|r| r.metric(m).map_or(f64::NAN, |s| s.0)).collect())
        .collect();
    write_line_plot_png(path, &series)
}

/// Triangle mesh with vertices in patient mm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn normal(&self, t: &[u32; 3]) -> [f64; 3] {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        cross(sub(b, a), sub(c, a))
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| dot(self.normal(t), self.normal(t)).sqrt() / 2.0).sum()
    }

    /// Signed volume by the divergence theorem; positive for outward normals.
    pub fn enclosed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&n| n == 2)
    }

    /// Binary STL: 80-byte header, triangle count, then per triangle the
    /// unit normal, three vertices (f32) and a zero attribute word.
    pub fn write_stl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = [0u8; 80];
        let tag = b"nc2c isosurface";
        header[..tag.len()].copy_from_slice(tag);
        out.write_all(&header)?;
        out.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for t in &self.triangles {
            let n = self.normal(t);
            let len = dot(n, n).sqrt();
            let n = if len > 0.0 { n.map(|v| v / len) } else { n };
            for v in n.iter().chain(t.iter().flat_map(|&i| self.vertices[i as usize].iter())) {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
            out.write_all(&0u16.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_stl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_stl(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Kuhn decomposition of the unit cube into six tetrahedra sharing the
/// main diagonal; corner `k` has offset bits `(x, y, z) = (k&1, k>>1&1, k>>2&1)`.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Isosurface of `{HU > threshold}` by marching tetrahedra. Adjacent cubes
/// split shared faces identically and crossing vertices are shared per grid
/// edge, so regions clear of the volume boundary give closed meshes.
pub fn reconstruct_3d(volume: &CtVolume, threshold: f32) -> Result<Mesh> {
    let g = volume.geometry();
    let [nx, ny, nz] = g.dims;
    if nz < 2 {
        return Err(Error::InsufficientData(format!("isosurface needs ≥ 2 slices, got {nz}")));
    }
    let mut mesh = Mesh::default();
    if nx < 2 || ny < 2 {
        return Ok(mesh);
    }
    let flat = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let v = volume.voxels();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex_on = |a: usize, b: usize, mesh: &mut Mesh| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (va, vb) = (v[key.0] as f64, v[key.1] as f64);
            let t = ((threshold as f64 - va) / (vb - va)).clamp(0.0, 1.0);
            let pos = |i: usize| {
                let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                [x as f64, y as f64, z as f64]
            };
            let (pa, pb) = (pos(key.0), pos(key.1));
            let idx = [0, 1, 2].map(|k| pa[k] + t * (pb[k] - pa[k]));
            mesh.vertices.push(g.index_to_patient(idx));
            (mesh.vertices.len() - 1) as u32
        })
    };
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let corner: [usize; 8] = std::array::from_fn(|k| flat(x + (k & 1), y + (k >> 1 & 1), z + (k >> 2 & 1)));
                let inside: [bool; 8] = corner.map(|i| v[i] > threshold);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                for tet in TETS {
                    let ids = tet.map(|k| corner[k]);
                    let (ins, outs): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&i| v[i] > threshold);
                    let tris: Vec<[(usize, usize); 3]> = match (ins.len(), outs.len()) {
                        (1, 3) => vec![[(ins[0], outs[0]), (ins[0], outs[1]), (ins[0], outs[2])]],
                        (3, 1) => vec![[(ins[0], outs[0]), (ins[1], outs[0]), (ins[2], outs[0])]],
                        (2, 2) => vec![
                            [(ins[0], outs[0]), (ins[0], outs[1]), (ins[1], outs[1])],
                            [(ins[0], outs[0]), (ins[1], outs[1]), (ins[1], outs[0])],
                        ],
                        _ => continue,
                    };
                    let centre = |set: &[usize]| {
                        let mut c = [0.0; 3];
                        for &i in set {
                            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                            let p = g.index_to_patient([x as f64, y as f64, z as f64]);
                            for k in 0..3 {
                                c[k] += p[k] / set.len() as f64;
                            }
                        }
                        c
                    };
                    let outward = sub(centre(&outs), centre(&ins));
                    for tri in tris {
                        let mut t = tri.map(|(a, b)| vertex_on(a, b, &mut mesh));
                        if dot(mesh.normal(&t), outward) < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    Ok(mesh)
}
