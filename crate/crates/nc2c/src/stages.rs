//! One library function per pipeline stage. Every stage reads its inputs
//! from explicit paths, writes its artifacts into one output directory and
//! returns the in-memory results so stages can also be chained directly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nc2c_core::augment::{generate_augmented_set, write_augmented_set, AugmentedItem, TrainingPair};
use nc2c_core::eval::{
    cohort_report, reconstruct_3d, write_cohort_plot, write_cohort_report, write_slice_reports, SliceReport,
    SummaryRow,
};
use nc2c_core::ingestion::{load_dicom_series, load_mask, save_mask_bundle, save_volume_bundle};
use nc2c_core::output::{write_histogram_png, write_line_plot_png, write_panel_png};
use nc2c_core::phantom::{
    cohort_params, generate_phantom_pair, patient_paths, read_manifest, write_manifest, Cohort, Split, MANIFEST,
};
use nc2c_core::regions::{
    analyze_patient, concentric_rings, one_way_anova, partition_regions, sample_rings, Histogram, PatientAnalysis,
    Region, LUMEN,
};
use nc2c_core::regions::report::{write_comparisons, write_region_stats};
use nc2c_core::registration::pair_slices;
use nc2c_core::rng::derive_seed;
use nc2c_core::SeriesKind;
use nc2c_gan::train::{read_ledger, write_ledger, LEDGER_COLUMNS};
use nc2c_gan::{load_checkpoint, save_checkpoint, FitOptions, LedgerRow, TrainState};

use crate::config::PipelineConfig;
use crate::data::{
    aneurysmal_slices, dataset, evaluate_patient, load_patient, register_patient, spread, synthesize_volume,
    training_pairs, PatientSeries, RegisteredPatient,
};
use crate::error::{PipelineError, Result};

/// Name of the final checkpoint written by [`train`].
pub const MODEL: &str = "model.ckpt";
pub const LEDGER: &str = "ledger.csv";
pub const EPOCHS: &str = "epochs.csv";
pub const SLICE_REPORTS: &str = "slice_reports.json";

/// Shared state of one invocation.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: PipelineConfig,
    pub quiet: bool,
}

impl RunContext {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config, quiet: false }
    }

    pub fn log(&self, message: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("nc2c: {}", message.as_ref());
        }
    }

    /// `f` over `items` on `config.workers` scoped threads; results keep
    /// the input order and the first error in input order wins.
    pub fn parallel_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
        let workers = self.config.workers.clamp(1, items.len().max(1));
        if workers == 1 {
            return items.iter().map(f).collect();
        }
        let chunk = items.len().div_ceil(workers);
        let f = &f;
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
                .collect();
            let mut out = Vec::with_capacity(items.len());
            for h in handles {
                out.extend(h.join().expect("stage worker panicked")?);
            }
            Ok(out)
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path, e: csv::Error) -> PipelineError {
    PipelineError::io(path, std::io::Error::other(e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| PipelineError::io(path, e))
}

/// A patient of a bundle directory, registered onto its non-contrast grid.
#[derive(Debug, Clone)]
pub struct CohortMember {
    pub split: Split,
    pub patient: RegisteredPatient,
}

/// Every manifest patient of `data`, loaded and registered, in manifest order.
pub fn load_cohort(ctx: &RunContext, data: &Path) -> Result<Vec<CohortMember>> {
    let manifest = data.join(MANIFEST);
    if !manifest.is_file() {
        return Err(PipelineError::Validation(format!("{} has no {MANIFEST}", data.display())));
    }
    let rows = read_manifest(&manifest)?;
    ctx.parallel_map(&rows, |(id, split, _)| {
        Ok(CohortMember { split: *split, patient: register_patient(&load_patient(data, id)?)? })
    })
}

fn split_members(members: &[CohortMember], split: Split) -> Vec<&RegisteredPatient> {
    members.iter().filter(|m| m.split == split).map(|m| &m.patient).collect()
}

/// Synthetic cohort bundles and `manifest.csv` in `out`.
pub fn phantom(ctx: &RunContext, out: &Path) -> Result<Cohort> {
    let c = &ctx.config.phantom;
    let cohort = cohort_params(c.n, c.seed, &c.ranges)?;
    create_dir(out)?;
    ctx.parallel_map(&cohort.patients, |p| {
        let pair = generate_phantom_pair(&p.params)?;
        let [nc, cta, inner, outer] = patient_paths(out, &p.id);
        save_volume_bundle(&pair.nc, &nc)?;
        save_volume_bundle(&pair.cta, &cta)?;
        save_mask_bundle(&pair.inner, &inner)?;
        save_mask_bundle(&pair.outer, &outer)?;
        Ok(())
    })?;
    write_manifest(&cohort, &out.join(MANIFEST))?;
    ctx.log(format!("wrote {} phantom patients to {}", cohort.patients.len(), out.display()));
    Ok(cohort)
}

/// Converts `<input>/<id>/{nc,cta}/` DICOM series plus `<input>/<id>/inner`
/// and `<input>/<id>/outer` mask bundles (on the contrast grid) into bundles
/// in `out`. Patients are split half/half by a permutation keyed on
/// `phantom.seed`, with the larger half training.
pub fn ingest(ctx: &RunContext, input: &Path, out: &Path) -> Result<Vec<(String, Split)>> {
    let entries = fs::read_dir(input).map_err(|e| PipelineError::io(input, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(input, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.len() < 2 {
        return Err(PipelineError::Validation(format!(
            "{} must hold at least two patient directories",
            input.display()
        )));
    }
    create_dir(out)?;
    ctx.parallel_map(&ids, |id| {
        let dir = input.join(id);
        let nc = load_dicom_series(&dir.join("nc"), SeriesKind::NonContrast)?;
        let cta = load_dicom_series(&dir.join("cta"), SeriesKind::Contrast)?;
        let inner = load_mask(&dir.join("inner"), &cta)?;
        let outer = load_mask(&dir.join("outer"), &cta)?;
        let [p_nc, p_cta, p_inner, p_outer] = patient_paths(out, id);
        save_volume_bundle(&nc, &p_nc)?;
        save_volume_bundle(&cta, &p_cta)?;
        save_mask_bundle(&inner, &p_inner)?;
        save_mask_bundle(&outer, &p_outer)?;
        Ok(())
    })?;
    let seed = ctx.config.phantom.seed;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| derive_seed(seed, &[i as u64]));
    let n_train = ids.len() - ids.len() / 2;
    let mut splits = vec![Split::Test; ids.len()];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    let path = out.join(MANIFEST);
    let mut w = csv_writer(&path)?;
    w.write_record(["patient", "split", "master_seed", "seed", "inner_radius_px", "max_outer_radius_px"])
        .map_err(|e| csv_io(&path, e))?;
    for (id, split) in ids.iter().zip(&splits) {
        w.write_record([id.as_str(), split.as_str(), &seed.to_string(), "", "", ""])
            .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(&path, e))?;
    ctx.log(format!("ingested {} patients into {}", ids.len(), out.display()));
    Ok(ids.into_iter().zip(splits).collect())
}

/// Registered bundles (contrast series and masks on the non-contrast grid),
/// one `<id>_pairing.csv` per patient and a copy of the manifest.
pub fn register(ctx: &RunContext, data: &Path, out: &Path) -> Result<Vec<CohortMember>> {
    let manifest = data.join(MANIFEST);
    if !manifest.is_file() {
        return Err(PipelineError::Validation(format!("{} has no {MANIFEST}", data.display())));
    }
    let rows = read_manifest(&manifest)?;
    create_dir(out)?;
    let members = ctx.parallel_map(&rows, |(id, split, _)| {
        let series: PatientSeries = load_patient(data, id)?;
        let r = register_patient(&series)?;
        pair_slices(series.nc.geometry(), series.cta.geometry(), None)?.write_csv(&out.join(format!("{id}_pairing.csv")))?;
        let [nc, cta, inner, outer] = patient_paths(out, id);
        save_volume_bundle(&r.nc, &nc)?;
        save_volume_bundle(&r.ct, &cta)?;
        save_mask_bundle(&r.inner, &inner)?;
        save_mask_bundle(&r.outer, &outer)?;
        Ok(CohortMember { split: *split, patient: r })
    })?;
    fs::copy(&manifest, out.join(MANIFEST)).map_err(|e| PipelineError::io(&manifest, e))?;
    ctx.log(format!("registered {} patients into {}", members.len(), out.display()));
    Ok(members)
}

/// `count` consecutive entries of `candidates` centred on their middle.
pub fn centred_run(candidates: &[usize], count: usize) -> Vec<usize> {
    if count >= candidates.len() {
        return candidates.to_vec();
    }
    let start = (candidates.len() - count) / 2;
    candidates[start..start + count].to_vec()
}

/// One ring-control ANOVA of the negative-control table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingControl {
    pub patient: String,
    pub slice: usize,
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub analyses: Vec<PatientAnalysis>,
    pub rings: Vec<RingControl>,
}

/// Region statistics of the non-contrast series on the first
/// `analysis.patients` manifest patients, `analysis.slices` centred
/// aneurysmal slices each: `region_stats.csv`, `comparisons.csv`,
/// `rings.csv` (concentric lumen rings) and one `hist_<id>.png` per patient.
pub fn analyze(ctx: &RunContext, members: &[CohortMember], out: &Path) -> Result<AnalysisOutput> {
    let a = &ctx.config.analysis;
    let chosen: Vec<&RegisteredPatient> = members.iter().take(a.patients).map(|m| &m.patient).collect();
    create_dir(out)?;
    let per_patient = ctx.parallel_map(&chosen, |p| {
        let slices = centred_run(&aneurysmal_slices(p)?, a.slices);
        let mut triples = Vec::with_capacity(slices.len());
        let mut rings = Vec::new();
        for &k in &slices {
            let part = partition_regions(&p.inner.slice(k)?, &p.outer.slice(k)?, ctx.config.core_fraction)?;
            let pixels = p.nc.extract_slice(k)?.pixels;
            if let Ok(masks) = concentric_rings(&part.mask(LUMEN), a.rings) {
                let r = one_way_anova(&sample_rings(&pixels, &masks)?)?;
                rings.push(RingControl {
                    patient: p.id.clone(),
                    slice: k,
                    f: r.f,
                    df_between: r.df_between,
                    df_within: r.df_within,
                    p: r.p,
                });
            }
            triples.push((k, pixels, part));
        }
        let analysis = analyze_patient(&p.id, &triples, a.correction)?;
        let mut pooled: [Vec<f64>; 3] = Default::default();
        for (_, pixels, part) in &triples {
            if part.flagged() {
                continue;
            }
            for (i, r) in Region::ALL.iter().enumerate() {
                let m = part.mask(r.label());
                pooled[i].extend(
                    pixels.as_slice().iter().zip(m.as_slice()).filter(|(_, &on)| on).map(|(&v, _)| v as f64),
                );
            }
        }
        let series = pooled
            .iter()
            .map(|v| Ok(Histogram::new(v, a.histogram_bin_hu)?.bins()))
            .collect::<Result<Vec<_>>>()?;
        write_histogram_png(&out.join(format!("hist_{}.png", p.id)), &series, a.histogram_bin_hu)?;
        Ok((analysis, rings))
    })?;
    let (analyses, rings): (Vec<_>, Vec<_>) = per_patient.into_iter().unzip();
    let rings: Vec<RingControl> = rings.into_iter().flatten().collect();
    write_region_stats(&analyses, create_file(&out.join("region_stats.csv"))?)?;
    write_comparisons(&analyses, create_file(&out.join("comparisons.csv"))?)?;
    let path = out.join("rings.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["patient", "slice", "f", "df_between", "df_within", "p"]).map_err(|e| csv_io(&path, e))?;
    for r in &rings {
        w.write_record([
            r.patient.clone(),
            r.slice.to_string(),
            format!("{:.6}", r.f),
            r.df_between.to_string(),
            r.df_within.to_string(),
            format!("{:.6e}", r.p),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(&path, e))?;
    ctx.log(format!("analysed {} patients into {}", analyses.len(), out.display()));
    Ok(AnalysisOutput { analyses, rings })
}

/// Source pairs of the training split: `augment.slices_per_patient`
/// aneurysmal slices per patient, spread evenly over the sac.
pub fn source_pairs(ctx: &RunContext, members: &[CohortMember]) -> Result<Vec<TrainingPair>> {
    let per = ctx.config.augment.slices_per_patient;
    let lists = ctx.parallel_map(&split_members(members, Split::Train), |p| {
        training_pairs(p, &spread(&aneurysmal_slices(p)?, per))
    })?;
    let pairs: Vec<TrainingPair> = lists.into_iter().flatten().collect();
    if pairs.is_empty() {
        return Err(PipelineError::Validation("the training split has no aneurysmal slices".into()));
    }
    Ok(pairs)
}

/// The augmented training set, originals first within each source.
pub fn augmented_set(ctx: &RunContext, members: &[CohortMember]) -> Result<Vec<AugmentedItem>> {
    let a = &ctx.config.augment;
    Ok(generate_augmented_set(&source_pairs(ctx, members)?, a.ratio, a.seed, &a.warp)?)
}

/// Writes the augmented training set as PNG16 slices and mask PNGs.
pub fn augment(ctx: &RunContext, members: &[CohortMember], out: &Path) -> Result<Vec<AugmentedItem>> {
    let items = augmented_set(ctx, members)?;
    write_augmented_set(&items, out)?;
    ctx.log(format!("wrote {} augmented items to {}", items.len(), out.display()));
    Ok(items)
}

/// Mean of every loss column per epoch; `steps` iterations per epoch.
pub fn epoch_means(ledger: &[LedgerRow], steps: usize) -> Vec<[f64; 7]> {
    ledger
        .chunks(steps.max(1))
        .map(|rows| {
            let n = rows.len() as f64;
            let mut m = [0.0; 7];
            for r in rows {
                for (acc, v) in m.iter_mut().zip(loss_values(r)) {
                    *acc += v / n;
                }
            }
            m
        })
        .collect()
}

fn loss_values(r: &LedgerRow) -> [f64; 7] {
    [r.g_adv, r.d_ct, r.d_nc, r.cycle_nc, r.cycle_ct, r.identity_nc, r.identity_ct]
}

pub fn write_epoch_means(means: &[[f64; 7]], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["epoch"];
    header.extend(&LEDGER_COLUMNS[1..]);
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for (e, m) in means.iter().enumerate() {
        let mut rec = vec![(e + 1).to_string()];
        rec.extend(m.iter().map(|v| format!("{v:.9}")));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_epoch_means(path: &Path) -> Result<Vec<[f64; 7]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let mut m = [0.0; 7];
        for (i, v) in m.iter_mut().enumerate() {
            *v = rec
                .get(i + 1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| PipelineError::Validation(format!("bad row in {}", path.display())))?;
        }
        out.push(m);
    }
    Ok(out)
}

fn losses_plot(means: &[[f64; 7]], path: &Path) -> Result<()> {
    if means.is_empty() {
        return Ok(());
    }
    let series: Vec<Vec<f64>> = (0..7).map(|c| means.iter().map(|m| m[c]).collect()).collect();
    Ok(write_line_plot_png(path, &series)?)
}

/// Trains on the augmented training split from fresh networks or from
/// `resume`, whose configuration must equal `config.train`. Writes
/// `checkpoints/`, `model.ckpt`, `ledger.csv`, `epochs.csv` and `losses.png`.
pub fn train(ctx: &RunContext, members: &[CohortMember], out: &Path, resume: Option<&Path>) -> Result<TrainState<f32>> {
    let pairs: Vec<TrainingPair> = augmented_set(ctx, members)?.into_iter().map(|i| i.pair).collect();
    let data = dataset(&pairs, ctx.config.window);
    let mut state = match resume {
        Some(path) => {
            let s = load_checkpoint::<f32>(path)?;
            if s.config != ctx.config.train {
                return Err(PipelineError::Validation(format!(
                    "checkpoint {} was trained with a different configuration",
                    path.display()
                )));
            }
            s
        }
        None => TrainState::new(ctx.config.train.clone())?,
    };
    create_dir(out)?;
    let steps = data.nc.len().div_ceil(state.config.batch_size);
    ctx.log(format!("training on {} items, {} epochs", data.nc.len(), state.config.epochs));
    let quiet = ctx.quiet;
    let mut options = FitOptions {
        checkpoint_dir: Some(out.join("checkpoints")),
        dump_dir: Some(out.to_path_buf()),
        on_epoch: Some(Box::new(move |s: &TrainState<f32>| {
            if !quiet {
                let m = epoch_means(&s.ledger[s.ledger.len().saturating_sub(steps)..], steps);
                if let Some(m) = m.first() {
                    eprintln!(
                        "nc2c: epoch {} g_adv {:.4} d_ct {:.4} d_nc {:.4} cycle {:.4} {:.4} identity {:.4} {:.4}",
                        s.epoch, m[0], m[1], m[2], m[3], m[4], m[5], m[6]
                    );
                }
            }
        })),
    };
    state.fit(&data, &mut options)?;
    save_checkpoint(&state, &out.join(MODEL))?;
    write_ledger(&state.ledger, &out.join(LEDGER))?;
    let means = epoch_means(&state.ledger, steps);
    write_epoch_means(&means, &out.join(EPOCHS))?;
    losses_plot(&means, &out.join("losses.png"))?;
    Ok(state)
}

pub fn load_model(path: &Path) -> Result<TrainState<f32>> {
    if !path.is_file() {
        return Err(PipelineError::Validation(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

fn panel(p: &RegisteredPatient, generated: &nc2c_core::CtVolume, k: usize, path: &Path, ctx: &RunContext) -> Result<()> {
    let nc = p.nc.extract_slice(k)?.pixels;
    let g = generated.extract_slice(k)?.pixels;
    let t = p.ct.extract_slice(k)?.pixels;
    Ok(write_panel_png(path, &[&nc, &g, &t], ctx.config.eval.metrics.window)?)
}

fn middle_slice(p: &RegisteredPatient) -> Result<usize> {
    let an = aneurysmal_slices(p)?;
    Ok(if an.is_empty() { p.nc.num_slices() / 2 } else { an[an.len() / 2] })
}

/// Synthetic contrast bundles `<id>_gen` for the test split, with a
/// non-contrast | generated | truth panel of the middle aneurysmal slice.
pub fn infer(ctx: &RunContext, state: &TrainState<f32>, members: &[CohortMember], out: &Path) -> Result<usize> {
    let test = split_members(members, Split::Test);
    create_dir(out)?;
    ctx.parallel_map(&test, |p| {
        let g = synthesize_volume(state, &p.nc, ctx.config.window)?;
        save_volume_bundle(&g, &out.join(format!("{}_gen", p.id)))?;
        panel(p, &g, middle_slice(p)?, &out.join(format!("{}_panel.png", p.id)), ctx)
    })?;
    ctx.log(format!("synthesised {} patients into {}", test.len(), out.display()));
    Ok(test.len())
}

/// Mesh statistics of one isosurface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshRow {
    pub patient: String,
    pub source: &'static str,
    pub triangles: usize,
    pub surface_area_mm2: f64,
    pub volume_mm3: f64,
    pub watertight: bool,
}

/// Slice metrics of every aneurysmal test slice against the registered
/// contrast series: `slice_metrics.csv`, `slice_reports.json`,
/// `cohort_summary.{csv,png}`, `meshes.csv`, generated and truth STL meshes
/// and one panel per patient.
pub fn evaluate(
    ctx: &RunContext,
    state: &TrainState<f32>,
    members: &[CohortMember],
    out: &Path,
) -> Result<Vec<SliceReport>> {
    let test = split_members(members, Split::Test);
    if test.is_empty() {
        return Err(PipelineError::Validation("the test split is empty".into()));
    }
    create_dir(out)?;
    let e = &ctx.config.eval;
    let per_patient = ctx.parallel_map(&test, |p| {
        let g = synthesize_volume(state, &p.nc, ctx.config.window)?;
        let slices = aneurysmal_slices(p)?;
        let reports = evaluate_patient(p, &g, &slices, ctx.config.core_fraction, &e.metrics)?;
        panel(p, &g, middle_slice(p)?, &out.join(format!("{}_panel.png", p.id)), ctx)?;
        let mut meshes = Vec::new();
        for (source, volume) in [("generated", &g), ("truth", &p.ct)] {
            let mesh = reconstruct_3d(volume, e.mesh_threshold_hu)?;
            mesh.save_stl(&out.join(format!("{}_{source}.stl", p.id)))?;
            meshes.push(MeshRow {
                patient: p.id.clone(),
                source,
                triangles: mesh.triangles.len(),
                surface_area_mm2: mesh.surface_area(),
                volume_mm3: mesh.enclosed_volume(),
                watertight: mesh.is_watertight(),
            });
        }
        Ok((reports, meshes))
    })?;
    let (reports, meshes): (Vec<_>, Vec<_>) = per_patient.into_iter().unzip();
    let reports: Vec<SliceReport> = reports.into_iter().flatten().collect();
    write_slice_reports(&reports, create_file(&out.join("slice_metrics.csv"))?)?;
    write_file(&out.join(SLICE_REPORTS), serde_json::to_vec_pretty(&reports)?)?;
    write_summary(&reports, out)?;
    let path = out.join("meshes.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["patient", "source", "triangles", "surface_area_mm2", "volume_mm3", "watertight"])
        .map_err(|e| csv_io(&path, e))?;
    for m in meshes.iter().flatten() {
        w.write_record([
            m.patient.clone(),
            m.source.to_string(),
            m.triangles.to_string(),
            format!("{:.6}", m.surface_area_mm2),
            format!("{:.6}", m.volume_mm3),
            m.watertight.to_string(),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(&path, e))?;
    ctx.log(format!("evaluated {} slices into {}", reports.len(), out.display()));
    Ok(reports)
}

fn write_summary(reports: &[SliceReport], out: &Path) -> Result<Vec<SummaryRow>> {
    let rows = cohort_report(reports)?;
    write_cohort_report(&rows, create_file(&out.join("cohort_summary.csv"))?)?;
    write_cohort_plot(&rows, &out.join("cohort_summary.png"))?;
    Ok(rows)
}

/// Headline numbers of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub slices: usize,
    /// Fraction of slices whose generated lumen mean exceeds the generated
    /// thrombus mean.
    pub lumen_above_thrombus: f64,
    pub median_lumen_dice: f64,
    pub mean_mae: f64,
    pub mean_psnr: f64,
}

pub fn summarize(reports: &[SliceReport]) -> EvalSummary {
    let n = reports.len();
    let above = reports
        .iter()
        .filter(|r| match (r.regional[0].generated, r.regional[2].generated) {
            (Some(l), Some(t)) => l > t,
            _ => false,
        })
        .count();
    let mut dice: Vec<f64> = reports.iter().map(|r| r.lumen_dice).collect();
    dice.sort_by(f64::total_cmp);
    let median = match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => dice[n / 2],
        _ => 0.5 * (dice[n / 2 - 1] + dice[n / 2]),
    };
    let mean = |f: fn(&SliceReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
    EvalSummary {
        slices: n,
        lumen_above_thrombus: above as f64 / n as f64,
        median_lumen_dice: median,
        mean_mae: mean(|r| r.mae),
        mean_psnr: mean(|r| r.psnr),
    }
}

/// Training behaviour read off the per-epoch loss means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSummary {
    pub epochs: usize,
    /// `[nc, ct]` cycle-loss means of the first and last epochs.
    pub cycle_first: [f64; 2],
    pub cycle_last: [f64; 2],
    /// `1 − last / first` per direction.
    pub cycle_drop: [f64; 2],
    /// Largest relative change of either cycle loss between the means of
    /// the last two windows of `window` epochs.
    pub late_change: f64,
}

pub fn loss_summary(means: &[[f64; 7]], window: usize) -> Option<LossSummary> {
    let (first, last) = (means.first()?, means.last()?);
    let pick = |m: &[f64; 7]| [m[3], m[4]];
    let (f, l) = (pick(first), pick(last));
    let late_change = if window > 0 && means.len() >= 2 * window {
        let avg = |s: &[[f64; 7]], c: usize| s.iter().map(|m| m[c]).sum::<f64>() / s.len() as f64;
        let tail = &means[means.len() - 2 * window..];
        [3, 4]
            .iter()
            .map(|&c| {
                let (a, b) = (avg(&tail[..window], c), avg(&tail[window..], c));
                (a - b).abs() / a
            })
            .fold(0.0, f64::max)
    } else {
        f64::NAN
    };
    Some(LossSummary {
        epochs: means.len(),
        cycle_first: f,
        cycle_last: l,
        cycle_drop: [1.0 - l[0] / f[0], 1.0 - l[1] / f[1]],
        late_change,
    })
}

/// Summary tables, loss curves and a Markdown digest from the artifacts of
/// the train and evaluate stages.
pub fn report(ctx: &RunContext, train_dir: &Path, eval_dir: &Path, out: &Path) -> Result<String> {
    let reports_path = eval_dir.join(SLICE_REPORTS);
    let reports: Vec<SliceReport> = serde_json::from_slice(
        &fs::read(&reports_path).map_err(|e| PipelineError::io(&reports_path, e))?,
    )?;
    let epochs_path = train_dir.join(EPOCHS);
    let means = read_epoch_means(&epochs_path)?;
    let ledger = read_ledger(&train_dir.join(LEDGER))?;
    create_dir(out)?;
    let rows = write_summary(&reports, out)?;
    losses_plot(&means, &out.join("losses.png"))?;
    let s = summarize(&reports);
    let mut md = String::from("# Run report\n\n## Training\n\n");
    md += &format!("- iterations: {}\n- epochs: {}\n", ledger.len(), means.len());
    if let Some(l) = loss_summary(&means, 3) {
        md += &format!(
            "- cycle loss nc: {:.5} to {:.5} ({:.1}% drop)\n- cycle loss ct: {:.5} to {:.5} ({:.1}% drop)\n",
            l.cycle_first[0],
            l.cycle_last[0],
            100.0 * l.cycle_drop[0],
            l.cycle_first[1],
            l.cycle_last[1],
            100.0 * l.cycle_drop[1]
        );
        if l.late_change.is_finite() {
            md += &format!("- late relative change of cycle losses: {:.1}%\n", 100.0 * l.late_change);
        }
    }
    md += "\n## Evaluation\n\n";
    md += &format!(
        "- slices: {}\n- generated lumen above thrombus: {:.1}%\n- median lumen Dice: {:.3}\n- mean MAE: {:.2} HU\n- mean PSNR: {:.2} dB\n",
        s.slices,
        100.0 * s.lumen_above_thrombus,
        s.median_lumen_dice,
        s.mean_mae,
        s.mean_psnr
    );
    md += "\n| metric | mean | sd |\n|---|---|---|\n";
    for r in rows.iter().filter(|r| r.group == "cohort") {
        for m in nc2c_core::eval::METRICS {
            if let Some((mean, sd)) = r.metric(m) {
                md += &format!("| {m} | {mean:.4} | {sd:.4} |\n");
            }
        }
    }
    write_file(&out.join("report.md"), &md)?;
    ctx.log(format!("wrote report to {}", out.display()));
    Ok(md)
}

/// Directories of a full pipeline run under `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineLayout {
    pub data: PathBuf,
    pub registered: PathBuf,
    pub analysis: PathBuf,
    pub augmented: PathBuf,
    pub train: PathBuf,
    pub eval: PathBuf,
    pub report: PathBuf,
}

impl PipelineLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            data: root.join("data"),
            registered: root.join("registered"),
            analysis: root.join("analysis"),
            augmented: root.join("augmented"),
            train: root.join("train"),
            eval: root.join("eval"),
            report: root.join("report"),
        }
    }
}

/// Every enabled stage in order. Without the phantom stage the bundles come
/// from `config.data`; without training the model comes from `resume`.
pub fn pipeline(ctx: &RunContext, root: &Path, resume: Option<&Path>) -> Result<PipelineLayout> {
    let t = &ctx.config.stages;
    let layout = PipelineLayout::new(root);
    let data = if t.phantom {
        phantom(ctx, &layout.data)?;
        layout.data.clone()
    } else {
        ctx.config
            .data
            .clone()
            .ok_or_else(|| PipelineError::Validation("pipeline without the phantom stage needs `data`".into()))?
    };
    let members = if t.register { register(ctx, &data, &layout.registered)? } else { load_cohort(ctx, &data)? };
    if t.analyze {
        analyze(ctx, &members, &layout.analysis)?;
    }
    if t.augment {
        augment(ctx, &members, &layout.augmented)?;
    }
    let state = if t.train {
        Some(train(ctx, &members, &layout.train, resume)?)
    } else {
        resume.map(load_model).transpose()?
    };
    if t.evaluate {
        let state = state
            .as_ref()
            .ok_or_else(|| PipelineError::Validation("evaluation needs training or a checkpoint".into()))?;
        evaluate(ctx, state, &members, &layout.eval)?;
    }
    if t.report && t.train && t.evaluate {
        report(ctx, &layout.train, &layout.eval, &layout.report)?;
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_run_is_consecutive_and_centred() {
        let c: Vec<usize> = (5..17).collect();
        assert_eq!(centred_run(&c, 4), vec![9, 10, 11, 12]);
        assert_eq!(centred_run(&c, 20), c);
    }

    #[test]
    fn parallel_map_keeps_order_and_first_error() {
        let mut ctx = RunContext::new(PipelineConfig { workers: 3, ..Default::default() });
        ctx.quiet = true;
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(ctx.parallel_map(&items, |&i| Ok(i * i)).unwrap(), items.iter().map(|i| i * i).collect::<Vec<_>>());
        let err = ctx
            .parallel_map(&items, |&i| if i % 4 == 3 { Err(PipelineError::Validation(i.to_string())) } else { Ok(i) })
            .unwrap_err();
        assert!(matches!(err, PipelineError::Validation(s) if s == "3"));
    }

    #[test]
    fn epoch_means_average_each_epoch() {
        let row = |i: u64, v: f64| LedgerRow {
            iteration: i,
            g_adv: v,
            d_ct: v,
            d_nc: v,
            cycle_nc: v,
            cycle_ct: 2.0 * v,
            identity_nc: v,
            identity_ct: v,
        };
        let ledger = vec![row(1, 1.0), row(2, 3.0), row(3, 0.5), row(4, 0.5)];
        let m = epoch_means(&ledger, 2);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0][3], 2.0);
        assert_eq!(m[0][4], 4.0);
        let s = loss_summary(&m, 1).unwrap();
        assert_eq!(s.cycle_drop, [0.75, 0.75]);
        assert_eq!(s.late_change, 0.75);
    }

    #[test]
    fn summary_counts_lumen_above_thrombus() {
        use nc2c_core::eval::RegionalMean;
        let r = |l: f64, t: f64, d: f64| SliceReport {
            patient: "p".into(),
            slice: 0,
            mae: 1.0,
            psnr: 30.0,
            lumen_dice: d,
            regional: [
                RegionalMean { generated: Some(l), truth: None },
                RegionalMean { generated: None, truth: None },
                RegionalMean { generated: Some(t), truth: None },
            ],
        };
        let s = summarize(&[r(300.0, 40.0, 0.9), r(30.0, 40.0, 0.5), r(200.0, 20.0, 0.8)]);
        assert_eq!(s.slices, 3);
        assert!((s.lumen_above_thrombus - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.median_lumen_dice, 0.8);
    }
}
