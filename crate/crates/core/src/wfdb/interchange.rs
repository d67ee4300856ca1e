//! JSON interchange documents.
//!
//! A record document looks like:
//!
//! ```json
//! {
//!   "format": "ecgdel-record/1",
//!   "header": { "record_id": "sel100", "n_leads": 2, "fs": 250.0, "n_samples": 225000,
//!               "gain": [200.0, 200.0], "baseline": [0.0, 0.0],
//!               "storage_format": "Format212", "files": [...], "lead_names": [...] },
//!   "signal": [[...lead 0 in mV...], [...lead 1 in mV...]],
//!   "fiducials": [
//!     { "quality": "high", "lead": null,
//!       "waves": { "P":   { "onset": [..], "peak": [..], "offset": [..] },
//!                  "QRS": { ... }, "T": { ... } } }
//!   ],
//!   "reference_beats": [...],
//!   "condition": "mitdb"
//! }
//! ```
//!
//! The three arrays of a wave are parallel; a missing fiducial is `null`.
//! Prediction documents use the same layout without `signal`; see
//! [`LabelDocument`].

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FiducialSet, LabelQuality, Record, RecordHeader, Wave, WaveFiducial, WfdbError};

pub const RECORD_FORMAT: &str = "ecgdel-record/1";
pub const LABEL_FORMAT: &str = "ecgdel-labels/1";

/// A record together with every label set known for it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub record: Record,
    pub fiducials: Vec<FiducialSet>,
    /// QRS peak samples of every beat in the recording, when a reference beat
    /// annotation is available. Used to reject windows with unlabeled beats.
    pub reference_beats: Option<Vec<usize>>,
    /// Source-database condition tag (for grouping QRS width errors).
    pub condition: Option<String>,
}

impl LabeledRecord {
    pub fn new(record: Record) -> Self {
        Self {
            record,
            fiducials: Vec::new(),
            reference_beats: None,
            condition: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.record.header.record_id
    }

    /// The high-quality set, shared across leads.
    pub fn high_quality(&self) -> Option<&FiducialSet> {
        self.fiducials
            .iter()
            .find(|f| f.quality == LabelQuality::High)
    }

    /// The low-quality set of one lead.
    pub fn low_quality(&self, lead: usize) -> Option<&FiducialSet> {
        self.fiducials
            .iter()
            .find(|f| f.quality == LabelQuality::Low && f.lead == Some(lead))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WaveArrays {
    pub onset: Vec<Option<usize>>,
    pub peak: Vec<Option<usize>>,
    pub offset: Vec<Option<usize>>,
}

/// Serialized form of [`FiducialSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialSetDoc {
    pub quality: LabelQuality,
    #[serde(default)]
    pub lead: Option<usize>,
    pub waves: BTreeMap<String, WaveArrays>,
}

impl From<FiducialSet> for FiducialSetDoc {
    fn from(set: FiducialSet) -> Self {
        let waves = Wave::ALL
            .iter()
            .map(|&w| {
                let items = set.wave(w);
                let arrays = WaveArrays {
                    onset: items.iter().map(|f| f.onset).collect(),
                    peak: items.iter().map(|f| f.peak).collect(),
                    offset: items.iter().map(|f| f.offset).collect(),
                };
                (w.name().to_string(), arrays)
            })
            .collect();
        Self {
            quality: set.quality,
            lead: set.lead,
            waves,
        }
    }
}

impl TryFrom<FiducialSetDoc> for FiducialSet {
    type Error = WfdbError;

    fn try_from(doc: FiducialSetDoc) -> Result<Self, WfdbError> {
        let mut set = FiducialSet::new(doc.quality, doc.lead);
        for (name, arrays) in doc.waves {
            let wave = match name.as_str() {
                "P" => Wave::P,
                "QRS" => Wave::Qrs,
                "T" => Wave::T,
                other => return Err(WfdbError::Schema(format!("unknown wave {other:?}"))),
            };
            let n = arrays.peak.len();
            if arrays.onset.len() != n || arrays.offset.len() != n {
                return Err(WfdbError::Schema(format!(
                    "waves.{name}: onset/peak/offset arrays differ in length"
                )));
            }
            *set.wave_mut(wave) = (0..n)
                .map(|m| WaveFiducial {
                    onset: arrays.onset[m],
                    peak: arrays.peak[m],
                    offset: arrays.offset[m],
                })
                .collect();
        }
        set.validate(None)?;
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordDocument {
    format: String,
    header: RecordHeader,
    signal: Vec<Vec<f64>>,
    #[serde(default)]
    fiducials: Vec<FiducialSetDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_beats: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
}

pub fn export_interchange(rec: &LabeledRecord) -> String {
    let signal = (0..rec.record.n_leads())
        .map(|l| rec.record.lead(l))
        .collect();
    let doc = RecordDocument {
        format: RECORD_FORMAT.to_string(),
        header: rec.record.header.clone(),
        signal,
        fiducials: rec.fiducials.iter().cloned().map(Into::into).collect(),
        reference_beats: rec.reference_beats.clone(),
        condition: rec.condition.clone(),
    };
    serde_json::to_string(&doc).expect("record documents always serialize")
}

pub fn import_interchange(text: &str) -> Result<LabeledRecord, WfdbError> {
    let doc: RecordDocument =
        serde_json::from_str(text).map_err(|e| WfdbError::Schema(e.to_string()))?;
    if doc.format != RECORD_FORMAT {
        return Err(WfdbError::Schema(format!(
            "format: expected {RECORD_FORMAT:?}, found {:?}",
            doc.format
        )));
    }
    let header = doc.header;
    header.validate()?;
    if doc.signal.len() != header.n_leads {
        return Err(WfdbError::Schema(format!(
            "signal: {} leads, header declares {}",
            doc.signal.len(),
            header.n_leads
        )));
    }
    if let Some((l, lead)) = doc
        .signal
        .iter()
        .enumerate()
        .find(|(_, s)| s.len() != header.n_samples)
    {
        return Err(WfdbError::Schema(format!(
            "signal[{l}]: {} samples, header declares {}",
            lead.len(),
            header.n_samples
        )));
    }
    let signal = Array2::from_shape_fn((header.n_samples, header.n_leads), |(n, l)| {
        doc.signal[l][n]
    });
    let record = Record::new(header, signal)?;
    let fiducials = doc
        .fiducials
        .into_iter()
        .map(FiducialSet::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    for set in &fiducials {
        set.validate(Some(record.n_samples()))?;
    }
    Ok(LabeledRecord {
        record,
        fiducials,
        reference_beats: doc.reference_beats,
        condition: doc.condition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub record_id: String,
    pub fs: f64,
    pub n_samples: usize,
}

/// Fiducials without a signal: the format for predictions and for any
/// third-party delineator output. Record documents also parse as label
/// documents (extra fields are ignored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDocument {
    #[serde(default = "label_format")]
    pub format: String,
    pub header: LabelHeader,
    pub fiducials: Vec<FiducialSetDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

fn label_format() -> String {
    LABEL_FORMAT.to_string()
}

impl LabelDocument {
    pub fn new(
        header: LabelHeader,
        fiducials: Vec<FiducialSet>,
        condition: Option<String>,
    ) -> Self {
        Self {
            format: label_format(),
            header,
            fiducials: fiducials.into_iter().map(Into::into).collect(),
            condition,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, WfdbError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| WfdbError::Schema(e.to_string()))?;
        if !(doc.header.fs.is_finite() && doc.header.fs > 0.0) {
            return Err(WfdbError::Schema(format!(
                "header.fs: invalid value {}",
                doc.header.fs
            )));
        }
        doc.fiducial_sets()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("label documents always serialize")
    }

    pub fn fiducial_sets(&self) -> Result<Vec<FiducialSet>, WfdbError> {
        self.fiducials
            .iter()
            .cloned()
            .map(|d| {
                let set = FiducialSet::try_from(d)?;
                set.validate(Some(self.header.n_samples))?;
                Ok(set)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfdb::StorageFormat;
    use proptest::prelude::*;

    fn record(samples: Vec<[f64; 2]>) -> LabeledRecord {
        let n = samples.len();
        let header = RecordHeader {
            record_id: "sel1".into(),
            n_leads: 2,
            fs: 250.0,
            n_samples: n,
            gain: vec![200.0, 200.0],
            baseline: vec![0.0, 3.0],
            storage_format: StorageFormat::Format212,
            files: vec!["sel1.dat".into(); 2],
            lead_names: vec!["MLII".into(), "V5".into()],
        };
        let signal = Array2::from_shape_fn((n, 2), |(i, l)| samples[i][l]);
        LabeledRecord::new(Record::new(header, signal).unwrap())
    }

    #[test]
    fn one_sample_round_trip_is_exact() {
        let mut rec = record(vec![[0.1, -1.0 / 3.0]]);
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::Qrs)
            .push(WaveFiducial::complete(0, 0, 0));
        rec.fiducials.push(set);
        rec.condition = Some("nsrdb".into());
        let back = import_interchange(&export_interchange(&rec)).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn missing_fs_is_a_schema_violation() {
        let rec = record(vec![[0.0, 0.0]; 4]);
        let mut v: serde_json::Value = serde_json::from_str(&export_interchange(&rec)).unwrap();
        v["header"].as_object_mut().unwrap().remove("fs");
        let err = import_interchange(&v.to_string()).unwrap_err();
        assert!(
            matches!(&err, WfdbError::Schema(m) if m.contains("fs")),
            "{err}"
        );
    }

    #[test]
    fn out_of_range_fiducial_is_rejected() {
        let mut rec = record(vec![[0.0, 0.0]; 4]);
        let mut set = FiducialSet::new(LabelQuality::Low, Some(0));
        set.wave_mut(Wave::P).push(WaveFiducial::complete(1, 2, 9));
        rec.fiducials.push(set);
        assert!(import_interchange(&export_interchange(&rec)).is_err());
    }

    #[test]
    fn record_parses_as_label_document() {
        let mut rec = record(vec![[0.0, 0.0]; 20]);
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::T).push(WaveFiducial {
            onset: None,
            peak: Some(5),
            offset: Some(9),
        });
        rec.fiducials.push(set.clone());
        let labels = LabelDocument::from_json(&export_interchange(&rec)).unwrap();
        assert_eq!(labels.header.record_id, "sel1");
        assert_eq!(labels.fiducial_sets().unwrap(), vec![set]);
    }

    proptest! {
        #[test]
        fn signals_round_trip_within_tolerance(
            samples in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..300)
        ) {
            let rec = record(samples.iter().map(|&(a, b)| [a, b]).collect());
            let back = import_interchange(&export_interchange(&rec)).unwrap();
            prop_assert_eq!(&back.record.header, &rec.record.header);
            for (a, b) in back.record.signal.iter().zip(rec.record.signal.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
