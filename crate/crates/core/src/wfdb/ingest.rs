//! Reading a PhysioNet-style record directory (header, signal, annotation
//! files) into a [`LabeledRecord`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::interchange::LabeledRecord;
use super::{
    events_to_fiducials_lenient, parse_annotations, parse_header, parse_signal, LabelQuality, Wave,
    WaveCodeTable, WfdbError,
};

/// Which annotation files hold which label sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Extension of the manually reviewed annotation file.
    pub high_quality: String,
    /// Extensions of automatic per-lead annotation files, in lead order.
    pub low_quality: Vec<String>,
    /// Extensions tried in order for the full reference beat list.
    pub reference: Vec<String>,
    pub codes: WaveCodeTable,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            high_quality: "q1c".into(),
            low_quality: vec!["pu0".into(), "pu1".into()],
            reference: vec!["atr".into(), "pu".into()],
            codes: WaveCodeTable::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub record_id: String,
    /// Annotation files that were expected but not found.
    pub missing: Vec<String>,
    pub warnings: Vec<String>,
}

fn read(path: &Path) -> Result<Vec<u8>, WfdbError> {
    fs::read(path).map_err(|e| WfdbError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Record names (header file stems) in `dir`, sorted.
pub fn find_records(dir: &Path) -> Result<Vec<String>, WfdbError> {
    let entries = fs::read_dir(dir).map_err(|e| WfdbError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "hea"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Loads `<dir>/<id>.hea`, its signal file and whichever annotation files
/// exist. Header and signal errors are fatal; annotation problems are
/// reported.
pub fn ingest_record(
    dir: &Path,
    id: &str,
    opts: &IngestOptions,
) -> Result<(LabeledRecord, IngestReport), WfdbError> {
    let header_path = dir.join(format!("{id}.hea"));
    let text = String::from_utf8_lossy(&read(&header_path)?).into_owned();
    let header = parse_header(&text)?;
    let signal_file = header
        .files
        .first()
        .cloned()
        .unwrap_or_else(|| format!("{id}.dat"));
    let record = parse_signal(&read(&dir.join(&signal_file))?, &header)?;
    let n = record.n_samples();

    let mut report = IngestReport {
        record_id: id.to_string(),
        ..IngestReport::default()
    };
    let mut labeled = LabeledRecord::new(record);

    let ann_path = |ext: &str| -> PathBuf { dir.join(format!("{id}.{ext}")) };
    let load = |ext: &str,
                quality: LabelQuality,
                lead: Option<usize>,
                report: &mut IngestReport|
     -> Result<Option<super::FiducialSet>, WfdbError> {
        let path = ann_path(ext);
        if !path.exists() {
            report.missing.push(format!("{id}.{ext}"));
            return Ok(None);
        }
        let stream = parse_annotations(&read(&path)?, Some(n))?;
        let (set, warnings) =
            events_to_fiducials_lenient(&stream.events, &opts.codes, quality, lead);
        report.warnings.extend(
            stream
                .warnings
                .iter()
                .chain(&warnings)
                .map(|w| format!("{id}.{ext}: {w}")),
        );
        Ok(Some(set))
    };

    if let Some(set) = load(&opts.high_quality, LabelQuality::High, None, &mut report)? {
        labeled.fiducials.push(set);
    }
    for (lead, ext) in opts
        .low_quality
        .iter()
        .enumerate()
        .take(labeled.record.n_leads())
    {
        if let Some(set) = load(ext, LabelQuality::Low, Some(lead), &mut report)? {
            labeled.fiducials.push(set);
        }
    }

    for ext in &opts.reference {
        let path = ann_path(ext);
        if path.exists() {
            let stream = parse_annotations(&read(&path)?, Some(n))?;
            let beats: Vec<usize> = stream
                .events
                .iter()
                .filter(|e| opts.codes.qrs_peak.contains(&e.code))
                .map(|e| e.sample)
                .collect();
            labeled.reference_beats = Some(beats);
            break;
        }
    }
    if labeled.reference_beats.is_none() {
        // automatic annotations mark every beat
        if let Some(lq) = labeled.low_quality(0) {
            labeled.reference_beats =
                Some(lq.wave(Wave::Qrs).iter().filter_map(|f| f.peak).collect());
        }
    }
    Ok((labeled, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfdb::{encode_212, encode_annotations, AnnotationEvent};

    fn write_record(dir: &Path, with_high: bool) {
        let n = 1000;
        fs::write(
            dir.join("rec1.hea"),
            format!("rec1 2 250 {n}\nrec1.dat 212 200 11 0 0 0 0 MLII\nrec1.dat 212 200 11 0 0 0 0 V5\n"),
        )
        .unwrap();
        let samples: Vec<i16> = (0..2 * n).map(|i| ((i % 50) as i16) - 25).collect();
        fs::write(dir.join("rec1.dat"), encode_212(&samples)).unwrap();
        let beat = |off: usize| {
            vec![
                AnnotationEvent::new(off, 39),
                AnnotationEvent::new(off + 10, 1),
                AnnotationEvent::new(off + 20, 40),
            ]
        };
        let mut events = beat(100);
        events.extend(beat(400));
        let bytes = encode_annotations(&events);
        if with_high {
            fs::write(dir.join("rec1.q1c"), &bytes).unwrap();
        }
        fs::write(dir.join("rec1.pu0"), &bytes).unwrap();
        fs::write(dir.join("rec1.pu1"), &bytes).unwrap();
    }

    #[test]
    fn ingests_a_record_directory() {
        let dir = tempfile::tempdir().unwrap();
        write_record(dir.path(), true);
        assert_eq!(find_records(dir.path()).unwrap(), vec!["rec1".to_string()]);
        let (rec, report) = ingest_record(dir.path(), "rec1", &IngestOptions::default()).unwrap();
        assert_eq!(rec.record.n_samples(), 1000);
        assert_eq!(rec.high_quality().unwrap().wave(Wave::Qrs).len(), 2);
        assert!(rec.low_quality(1).is_some());
        assert_eq!(rec.reference_beats, Some(vec![110, 410]));
        assert!(report.missing.is_empty());
    }

    #[test]
    fn missing_annotation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_record(dir.path(), false);
        let (rec, report) = ingest_record(dir.path(), "rec1", &IngestOptions::default()).unwrap();
        assert!(rec.high_quality().is_none());
        assert_eq!(report.missing, vec!["rec1.q1c".to_string()]);
        assert!(ingest_record(dir.path(), "nope", &IngestOptions::default()).is_err());
    }
}
