//! CSV export of regional statistics.

use std::io::Write;

use super::{PatientAnalysis, Region, RegionStats};
use crate::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::io("csv", std::io::Error::other(e))
}

fn slice_label(s: &RegionStats) -> String {
    s.slice.map_or_else(|| "all".to_string(), |i| i.to_string())
}

fn rows(analyses: &[PatientAnalysis]) -> impl Iterator<Item = &RegionStats> {
    analyses
        .iter()
        .flat_map(|a| a.slices.iter().chain(std::iter::once(&a.pooled)))
}

/// One row per `(patient, slice, region)` with `n, mean, sd`; pooled rows
/// use slice `all`.
pub fn write_region_stats<W: Write>(analyses: &[PatientAnalysis], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient", "slice", "region", "n", "mean", "sd"]).map_err(csv_err)?;
    for s in rows(analyses) {
        for (k, r) in Region::ALL.iter().enumerate() {
            w.write_record([
                s.patient.clone(),
                slice_label(s),
                r.as_str().to_string(),
                s.counts[k].to_string(),
                format!("{:.6}", s.means[k]),
                format!("{:.6}", s.sds[k]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("csv", e))
}

/// One row per `(patient, slice, comparison)` with `F, df, p`.
pub fn write_comparisons<W: Write>(analyses: &[PatientAnalysis], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient", "slice", "comparison", "f", "df_between", "df_within", "p", "p_adjusted"])
        .map_err(csv_err)?;
    for s in rows(analyses) {
        for c in &s.comparisons {
            w.write_record([
                s.patient.clone(),
                slice_label(s),
                c.comparison.as_str().to_string(),
                format!("{:.6}", c.anova.f),
                c.anova.df_between.to_string(),
                c.anova.df_within.to_string(),
                format!("{:e}", c.anova.p),
                format!("{:e}", c.p_adjusted),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("csv", e))
}
