//! PhysioNet-style record and annotation I/O.
//!
//! Binary readers (header text, format 212 / 16 signals, MIT annotation
//! streams) are adapters; the canonical on-disk form used by the rest of the
//! crate is the JSON document in [`interchange`]. Signals are converted from
//! ADC units to millivolts once, at parse time.

mod annotation;
mod fiducials;
mod header;
mod ingest;
pub mod interchange;
mod signal;

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use annotation::{encode_annotations, parse_annotations, AnnotationEvent, AnnotationStream};
pub use fiducials::{events_to_fiducials, events_to_fiducials_lenient, WaveCodeTable};
pub use header::parse_header;
pub use ingest::{find_records, ingest_record, IngestOptions, IngestReport};
pub use signal::{encode_212, parse_signal, parse_signal_16, parse_signal_212, parse_signal_csv};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WfdbError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported storage format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated stream: needed {needed} bytes, found {found}")]
    TruncatedStream { needed: usize, found: usize },
    #[error("header/format mismatch: {0}")]
    FormatMismatch(String),
    #[error("header declares {declared} samples but {decoded} were decoded")]
    SampleCountMismatch { declared: usize, decoded: usize },
    #[error("orphan wave boundary at sample {sample}")]
    OrphanBoundary { sample: usize },
    #[error("invalid fiducials: {0}")]
    InvalidFiducials(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("signal contains non-finite values")]
    NonFiniteSignal,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Non-fatal findings collected while parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParseWarning {
    /// An annotation whose running time counter landed outside `[0, n_samples)`.
    OutOfRangeAnnotation { sample: i64, code: u8 },
    /// A boundary marker that could not be attached to any wave.
    OrphanBoundary { sample: usize },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::OutOfRangeAnnotation { sample, code } => {
                write!(
                    f,
                    "annotation code {code} at sample {sample} is out of range"
                )
            }
            ParseWarning::OrphanBoundary { sample } => {
                write!(f, "orphan boundary marker at sample {sample}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageFormat {
    Format212,
    Format16,
    TextCsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_id: String,
    pub n_leads: usize,
    /// Sampling frequency in Hz.
    pub fs: f64,
    pub n_samples: usize,
    /// ADC units per mV, one per lead.
    pub gain: Vec<f64>,
    /// ADC value corresponding to 0 mV, one per lead.
    pub baseline: Vec<f64>,
    pub storage_format: StorageFormat,
    /// Signal file names as declared in the header, one per lead.
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub lead_names: Vec<String>,
}

impl RecordHeader {
    pub fn validate(&self) -> Result<(), WfdbError> {
        if self.n_leads == 0 {
            return Err(WfdbError::MalformedHeader("record declares 0 leads".into()));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(WfdbError::MalformedHeader(format!(
                "invalid fs {}",
                self.fs
            )));
        }
        if self.n_samples == 0 {
            return Err(WfdbError::MalformedHeader(
                "record declares 0 samples".into(),
            ));
        }
        if self.gain.len() != self.n_leads || self.baseline.len() != self.n_leads {
            return Err(WfdbError::MalformedHeader(format!(
                "expected {} gain/baseline entries, found {}/{}",
                self.n_leads,
                self.gain.len(),
                self.baseline.len()
            )));
        }
        if let Some(g) = self.gain.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(WfdbError::MalformedHeader(format!("invalid gain {g}")));
        }
        Ok(())
    }
}

/// A multi-lead recording in millivolts, `signal[[sample, lead]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub header: RecordHeader,
    pub signal: Array2<f64>,
}

impl Record {
    pub fn new(header: RecordHeader, signal: Array2<f64>) -> Result<Self, WfdbError> {
        header.validate()?;
        if signal.dim() != (header.n_samples, header.n_leads) {
            return Err(WfdbError::FormatMismatch(format!(
                "signal is {:?}, header declares {} x {}",
                signal.dim(),
                header.n_samples,
                header.n_leads
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(WfdbError::NonFiniteSignal);
        }
        Ok(Self { header, signal })
    }

    pub fn n_samples(&self) -> usize {
        self.header.n_samples
    }

    pub fn n_leads(&self) -> usize {
        self.header.n_leads
    }

    pub fn fs(&self) -> f64 {
        self.header.fs
    }

    pub fn lead(&self, lead: usize) -> Vec<f64> {
        self.signal.column(lead).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Wave {
    P,
    Qrs,
    T,
}

impl Wave {
    pub const ALL: [Wave; 3] = [Wave::P, Wave::Qrs, Wave::T];

    /// Mask channel index, ordered (P, QRS, T).
    pub fn index(self) -> usize {
        match self {
            Wave::P => 0,
            Wave::Qrs => 1,
            Wave::T => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Wave::P => "P",
            Wave::Qrs => "QRS",
            Wave::T => "T",
        }
    }
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelQuality {
    High,
    Low,
}

/// One delineated wave. Any of the three fiducials may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WaveFiducial {
    pub onset: Option<usize>,
    pub peak: Option<usize>,
    pub offset: Option<usize>,
}

impl WaveFiducial {
    pub fn complete(onset: usize, peak: usize, offset: usize) -> Self {
        Self {
            onset: Some(onset),
            peak: Some(peak),
            offset: Some(offset),
        }
    }

    /// `(onset, offset)` when both are present.
    pub fn interval(&self) -> Option<(usize, usize)> {
        Some((self.onset?, self.offset?))
    }

    pub fn is_complete(&self) -> bool {
        self.onset.is_some() && self.peak.is_some() && self.offset.is_some()
    }

    /// Present fiducials in (onset, peak, offset) order.
    pub fn points(&self) -> impl Iterator<Item = usize> {
        [self.onset, self.peak, self.offset].into_iter().flatten()
    }

    /// Sample used to order waves: the first present fiducial.
    pub fn anchor(&self) -> Option<usize> {
        self.points().next()
    }
}

/// Fiducials of one label set, for one lead (`lead = Some(i)`) or shared by
/// all leads (`lead = None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "interchange::FiducialSetDoc",
    into = "interchange::FiducialSetDoc"
)]
pub struct FiducialSet {
    pub quality: LabelQuality,
    pub lead: Option<usize>,
    pub waves: [Vec<WaveFiducial>; 3],
}

impl FiducialSet {
    pub fn new(quality: LabelQuality, lead: Option<usize>) -> Self {
        Self {
            quality,
            lead,
            waves: Default::default(),
        }
    }

    pub fn wave(&self, wave: Wave) -> &[WaveFiducial] {
        &self.waves[wave.index()]
    }

    pub fn wave_mut(&mut self, wave: Wave) -> &mut Vec<WaveFiducial> {
        &mut self.waves[wave.index()]
    }

    pub fn onsets(&self, wave: Wave) -> Vec<usize> {
        self.wave(wave).iter().filter_map(|w| w.onset).collect()
    }

    pub fn peaks(&self, wave: Wave) -> Vec<usize> {
        self.wave(wave).iter().filter_map(|w| w.peak).collect()
    }

    pub fn offsets(&self, wave: Wave) -> Vec<usize> {
        self.wave(wave).iter().filter_map(|w| w.offset).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.iter().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.waves.iter().map(Vec::len).sum()
    }

    /// Checks ordering within each wave and, when `n_samples` is given, that
    /// every index is in range.
    pub fn validate(&self, n_samples: Option<usize>) -> Result<(), WfdbError> {
        for wave in Wave::ALL {
            let items = self.wave(wave);
            for (m, w) in items.iter().enumerate() {
                let pts: Vec<usize> = w.points().collect();
                if pts.is_empty() {
                    return Err(WfdbError::InvalidFiducials(format!("{wave}[{m}] is empty")));
                }
                if pts.windows(2).any(|p| p[0] > p[1]) {
                    return Err(WfdbError::InvalidFiducials(format!(
                        "{wave}[{m}] is not ordered onset <= peak <= offset: {w:?}"
                    )));
                }
                if let Some(n) = n_samples {
                    if let Some(bad) = pts.iter().find(|&&p| p >= n) {
                        return Err(WfdbError::InvalidFiducials(format!(
                            "{wave}[{m}] index {bad} outside [0, {n})"
                        )));
                    }
                }
            }
            for get in [
                (|w: &WaveFiducial| w.onset) as fn(&WaveFiducial) -> Option<usize>,
                |w| w.peak,
                |w| w.offset,
            ] {
                let seq: Vec<usize> = items.iter().filter_map(get).collect();
                if seq.windows(2).any(|p| p[0] > p[1]) {
                    return Err(WfdbError::InvalidFiducials(format!(
                        "{wave} fiducials not sorted"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sorts waves by their first present fiducial.
    pub fn sort(&mut self) {
        for w in &mut self.waves {
            w.sort_by_key(|f| (f.anchor(), f.peak, f.offset));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fiducial_validation_rejects_unordered_triple() {
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::P)
            .push(WaveFiducial::complete(10, 5, 12));
        assert!(set.validate(None).is_err());
    }

    #[test]
    fn fiducial_validation_rejects_out_of_range() {
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::T)
            .push(WaveFiducial::complete(10, 15, 20));
        assert!(set.validate(Some(30)).is_ok());
        assert!(set.validate(Some(20)).is_err());
    }

    #[test]
    fn record_rejects_dimension_mismatch() {
        let header = RecordHeader {
            record_id: "r".into(),
            n_leads: 2,
            fs: 250.0,
            n_samples: 3,
            gain: vec![200.0; 2],
            baseline: vec![0.0; 2],
            storage_format: StorageFormat::Format212,
            files: vec![],
            lead_names: vec![],
        };
        assert!(Record::new(header.clone(), Array2::zeros((3, 2))).is_ok());
        assert!(matches!(
            Record::new(header, Array2::zeros((4, 2))),
            Err(WfdbError::FormatMismatch(_))
        ));
    }
}
