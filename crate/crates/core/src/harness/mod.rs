//! Experiment orchestration: curation, subject-wise folds, windowing,
//! training and whole-record prediction.

mod dataset;
mod predict;
mod train;
mod windows;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentError, AugmentSpec};
use crate::mask::MaskError;
use crate::metrics::{Averaging, ErrorMode, MetricsError};
use crate::nn::AdamConfig;
use crate::unet::{ModelConfig, ModelError};
use crate::wfdb::WfdbError;

pub use dataset::{
    curate, load_dataset, make_folds, split_validation, DatasetManifest, FoldSplit, ManifestEntry,
    DEFAULT_EXCLUSIONS,
};
pub use predict::{
    evaluate_prediction, masks_to_fiducials, predict_record, restrict_to_span, tile_starts,
    RecordPrediction,
};
pub use train::{derive_seed, train_fold, FoldOutcome, LogRow, Phase};
pub use windows::{best_low_quality_lead, make_windows, LeadSelector, Window, WindowSet};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{records} records cannot be split into {folds} folds")]
    TooFewRecords { records: usize, folds: usize },
    #[error("window of {window} samples is longer than the {n_samples}-sample record")]
    WindowTooLong { window: usize, n_samples: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Wfdb(#[from] WfdbError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

impl HarnessError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, HarnessError::Model(ModelError::Divergence(_)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeadMode {
    /// One input channel; every lead is an independent example.
    #[default]
    Single,
    /// All leads as input channels, one shared mask.
    Multi,
}

impl LeadMode {
    pub fn in_channels(self, n_leads: usize) -> usize {
        match self {
            LeadMode::Single => 1,
            LeadMode::Multi => n_leads,
        }
    }
}

/// Optimisation schedule. None of these values come from a published
/// protocol; they are practical defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub window_len: usize,
    /// Stride between training windows.
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs on low-quality labels before fine-tuning, when pre-training.
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    /// Fine-tuning learning rate after pre-training; defaults to `learning_rate`.
    pub finetune_learning_rate: Option<f64>,
    pub adam: AdamConfig,
    /// Fraction of training records held out for a validation loss. 0 disables.
    pub validation_fraction: f64,
    /// Hard cap on optimizer steps per phase, for smoke runs.
    pub max_steps: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            window_len: 2048,
            stride: 1024,
            batch_size: 16,
            epochs: 30,
            pretrain_epochs: 10,
            learning_rate: 1e-3,
            finetune_learning_rate: None,
            adam: AdamConfig::default(),
            validation_fraction: 0.0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub threshold: f32,
    /// Minimum run length kept when decoding masks, in seconds.
    pub min_run_seconds: f64,
    pub error_mode: ErrorMode,
    pub averaging: Averaging,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            threshold: crate::mask::DEFAULT_THRESHOLD,
            min_run_seconds: crate::mask::DEFAULT_MIN_RUN_SECONDS,
            error_mode: ErrorMode::default(),
            averaging: Averaging::default(),
        }
    }
}

/// Everything that determines a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub lead_mode: LeadMode,
    pub pretrain_low_quality: bool,
    pub augment: Vec<AugmentSpec>,
    pub folds: usize,
    pub seed: u64,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    /// Record ids dropped during curation.
    pub exclusions: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            model: ModelConfig::default(),
            lead_mode: LeadMode::Single,
            pretrain_low_quality: false,
            augment: Vec::new(),
            folds: 5,
            seed: 1234,
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            exclusions: DEFAULT_EXCLUSIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ExperimentConfig {
    /// Sets the lead mode and the matching model input width.
    pub fn with_lead_mode(mut self, mode: LeadMode, n_leads: usize) -> Self {
        self.lead_mode = mode;
        self.model.in_channels = mode.in_channels(n_leads);
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.model.validate()?;
        match (self.lead_mode, self.model.in_channels) {
            (LeadMode::Single, 1) | (LeadMode::Multi, 2) => {}
            (mode, c) => {
                return bad(format!(
                    "{mode:?} lead mode needs a matching in_channels, got {c}"
                ))
            }
        }
        let t = &self.training;
        let divisor = self.model.length_divisor();
        if t.window_len == 0 || t.window_len % divisor != 0 {
            return bad(format!(
                "window_len {} must be a positive multiple of {divisor}",
                t.window_len
            ));
        }
        if t.stride == 0 || t.batch_size == 0 {
            return bad("stride and batch_size must be positive".into());
        }
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return bad(format!("invalid learning rate {}", t.learning_rate));
        }
        if !(0.0..1.0).contains(&t.validation_fraction) {
            return bad(format!(
                "validation_fraction must be in [0, 1), got {}",
                t.validation_fraction
            ));
        }
        if self.folds == 0 {
            return bad("folds must be positive".into());
        }
        for spec in &self.augment {
            spec.validate()?;
        }
        Ok(())
    }
}
