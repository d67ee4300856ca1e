//! ECG delineation as one-dimensional semantic segmentation.
//!
//! The crate covers the whole pipeline:
//!
//! - [`wfdb`]: PhysioNet header / format 212 / MIT annotation readers and a
//!   JSON interchange format for records and their fiducials.
//! - [`mask`]: conversion between fiducials and 3-channel (P, QRS, T) masks.
//! - [`augment`]: six ECG-specific noise sources calibrated to a target SNR.
//! - [`nn`]: a small reverse-mode autodiff engine over `[batch, channel, length]`
//!   tensors, used by [`unet`].
//! - [`unet`]: the configurable 1D U-Net family, Jaccard loss, Dice and Adam.
//! - [`harness`]: curation, subject-wise folds, windowing, training and
//!   whole-record prediction.
//! - [`metrics`]: correspondence-based detection and delineation scores.
//! - [`synth`]: a synthetic ECG generator with exact fiducials, for tests and demos.

pub mod augment;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod unet;
pub mod wfdb;

pub use augment::{AugmentSpec, NoiseKind};
pub use harness::{ExperimentConfig, LeadMode};
pub use mask::{DelineationMask, MaskKind, WaveIntervals};
pub use metrics::MetricsReport;
pub use unet::{BlockType, ModelConfig, UNet};
pub use wfdb::{FiducialSet, LabelQuality, Record, RecordHeader, Wave};
