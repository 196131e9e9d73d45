//! Pipeline configuration: a TOML file whose every field has a default,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nc2c_core::augment::WarpConfig;
use nc2c_core::eval::EvalConfig;
use nc2c_core::phantom::CohortRanges;
use nc2c_core::regions::{Correction, DEFAULT_CORE_FRACTION};
use nc2c_core::Window;
use nc2c_gan::TrainConfig;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomStage {
    pub n: usize,
    pub seed: u64,
    pub ranges: CohortRanges,
}

impl Default for PhantomStage {
    fn default() -> Self {
        Self { n: 26, seed: 2024, ranges: CohortRanges::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisStage {
    /// Patients sampled, in manifest order.
    pub patients: usize,
    /// Consecutive aneurysmal slices per patient, centred in the sac.
    pub slices: usize,
    pub correction: Correction,
    pub rings: usize,
    pub histogram_bin_hu: f64,
}

impl Default for AnalysisStage {
    fn default() -> Self {
        Self { patients: 10, slices: 10, correction: Correction::None, rings: 3, histogram_bin_hu: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentStage {
    /// Warped copies per source slice.
    pub ratio: usize,
    pub seed: u64,
    /// Aneurysmal slices per training patient, spread evenly; 0 takes all.
    pub slices_per_patient: usize,
    pub warp: WarpConfig,
}

impl Default for AugmentStage {
    fn default() -> Self {
        Self { ratio: 10, seed: 7, slices_per_patient: 1, warp: WarpConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub metrics: EvalConfig,
    /// Isosurface level for the 3-D meshes.
    pub mesh_threshold_hu: f32,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self { metrics: EvalConfig::default(), mesh_threshold_hu: nc2c_core::eval::DEFAULT_ENHANCEMENT_HU }
    }
}

/// Stages run by `pipeline`, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub phantom: bool,
    pub register: bool,
    pub analyze: bool,
    pub augment: bool,
    pub train: bool,
    pub evaluate: bool,
    pub report: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { phantom: true, register: true, analyze: true, augment: true, train: true, evaluate: true, report: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Output root; runs land in `<out>/<run-id>/`.
    pub out: Option<PathBuf>,
    /// Bundle directory with a `manifest.csv`, read by every stage after
    /// the phantom / ingest stage.
    pub data: Option<PathBuf>,
    pub workers: usize,
    pub window: Window,
    pub core_fraction: f64,
    pub phantom: PhantomStage,
    pub analysis: AnalysisStage,
    pub augment: AugmentStage,
    pub train: TrainConfig,
    pub eval: EvalStage,
    pub stages: StageToggles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: None,
            data: None,
            workers: 1,
            window: Window::default(),
            core_fraction: DEFAULT_CORE_FRACTION,
            phantom: PhantomStage::default(),
            analysis: AnalysisStage::default(),
            augment: AugmentStage::default(),
            train: TrainConfig { epochs: 30, ..TrainConfig::desk() },
            eval: EvalStage::default(),
            stages: StageToggles::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks bounds of every parameter and that referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        Window::new(self.window.lo(), self.window.hi()).map_err(|e| invalid(e.to_string()))?;
        if !(self.core_fraction > 0.0 && self.core_fraction <= 1.0) {
            return Err(invalid(format!("core_fraction must be in (0, 1], got {}", self.core_fraction)));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.phantom.n < 2 {
            return Err(invalid(format!("phantom.n must be at least 2, got {}", self.phantom.n)));
        }
        let r = &self.phantom.ranges;
        if r.dims.contains(&0) || r.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("phantom grid dims and spacing must be positive"));
        }
        if self.analysis.rings < 2 {
            return Err(invalid("analysis.rings must be at least 2"));
        }
        if !(self.analysis.histogram_bin_hu > 0.0) {
            return Err(invalid("analysis.histogram_bin_hu must be positive"));
        }
        self.augment.warp.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        Window::new(self.eval.metrics.window.lo(), self.eval.metrics.window.hi()).map_err(|e| invalid(e.to_string()))?;
        if !self.eval.mesh_threshold_hu.is_finite() || !self.eval.metrics.enhancement_threshold_hu.is_finite() {
            return Err(invalid("evaluation thresholds must be finite"));
        }
        if let Some(d) = &self.data {
            if !d.is_dir() {
                return Err(invalid(format!("data directory {} does not exist", d.display())));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the configuration with the output location removed,
    /// so the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_files_keep_defaults() {
        let c = PipelineConfig::from_toml("[train]\nepochs = 3\n[augment]\nratio = 2\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.augment.ratio, 2);
        assert_eq!(c.train.lr, 2e-4);
        assert_eq!(c.phantom, PhantomStage::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_validation_errors() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(PipelineError::Validation(_))));
        assert!(matches!(PipelineConfig::from_toml("[train]\nepoch = 3"), Err(PipelineError::Validation(_))));
        let bad = PipelineConfig { core_fraction: 1.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(PipelineError::Validation(_))));
        let missing = PipelineConfig { data: Some("/nonexistent/dir".into()), ..Default::default() };
        assert!(matches!(missing.validate(), Err(PipelineError::Validation(_))));
    }

    #[test]
    fn hash_ignores_output_location_only() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { out: Some("elsewhere".into()), ..Default::default() };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.augment.seed += 1;
        assert_ne!(a.hash(), c.hash());
    }
}
