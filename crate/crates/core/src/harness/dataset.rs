use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::wfdb::interchange::{import_interchange, LabeledRecord};
use crate::wfdb::WfdbError;

/// Records dropped from the QT database before any experiment.
pub const DEFAULT_EXCLUSIONS: [&str; 4] = ["sel35", "sel232", "sel233", "sel36"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    pub included: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
    pub has_high_quality: bool,
    pub has_low_quality: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_records(records: &[LabeledRecord]) -> Self {
        let entries = records
            .iter()
            .map(|r| ManifestEntry {
                record_id: r.id().to_string(),
                paths: Vec::new(),
                included: true,
                exclusion_reason: None,
                has_high_quality: r.high_quality().is_some(),
                has_low_quality: (0..r.record.n_leads()).any(|l| r.low_quality(l).is_some()),
            })
            .collect();
        Self { entries }
    }

    pub fn included(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.included)
            .map(|e| e.record_id.as_str())
    }

    pub fn excluded(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| !e.included)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.record_id) {
                return Err(HarnessError::Data(format!(
                    "duplicate record id {}",
                    e.record_id
                )));
            }
            if !e.included && e.exclusion_reason.is_none() {
                return Err(HarnessError::Data(format!(
                    "{} is excluded without a reason",
                    e.record_id
                )));
            }
        }
        Ok(())
    }
}

/// Applies the exclusion list and flags records lacking a required label set.
/// Already-excluded entries keep their original reason.
pub fn curate(
    manifest: &DatasetManifest,
    exclusions: &[String],
    require_high: bool,
    require_low: bool,
) -> DatasetManifest {
    let entries = manifest
        .entries
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if !e.included {
                return e;
            }
            let reason = if exclusions.contains(&e.record_id) {
                Some("on the exclusion list")
            } else if require_high && !e.has_high_quality {
                Some("no high-quality labels")
            } else if require_low && !e.has_low_quality {
                Some("no low-quality labels")
            } else {
                None
            };
            if let Some(r) = reason {
                e.included = false;
                e.exclusion_reason = Some(r.to_string());
            }
            e
        })
        .collect();
    DatasetManifest { entries }
}

/// Reads every `*.json` interchange document in `dir`, sorted by file name.
/// Files holding a top-level JSON array (such as an ingest report) are
/// skipped.
pub fn load_dataset(dir: &Path) -> Result<(Vec<LabeledRecord>, DatasetManifest), HarnessError> {
    let io = |e: std::io::Error| {
        HarnessError::Wfdb(WfdbError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    let mut kept = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(io)?;
        if text.trim_start().starts_with('[') {
            continue;
        }
        let rec = import_interchange(&text)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))?;
        records.push(rec);
        kept.push(p);
    }
    let paths = kept;
    let mut manifest = DatasetManifest::from_records(&records);
    for (e, p) in manifest.entries.iter_mut().zip(paths) {
        e.paths = vec![p];
    }
    manifest.validate()?;
    Ok((records, manifest))
}

/// Record → fold assignment. Whole records go to one fold, so every window,
/// lead and augmentation of a record stays on the same side of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, record_id: &str) -> Option<usize> {
        self.assignment.get(record_id).copied()
    }

    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Sorts the ids, shuffles them with `seed` and deals them round-robin.
pub fn make_folds<S: AsRef<str>>(
    ids: &[S],
    k: usize,
    seed: u64,
) -> Result<FoldSplit, HarnessError> {
    let mut ids: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    if k == 0 || ids.len() < k {
        return Err(HarnessError::TooFewRecords {
            records: ids.len(),
            folds: k,
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldSplit {
        k,
        seed,
        assignment,
    })
}

/// Moves `fraction` of the training records (at least one when the fraction
/// is positive) into a validation set. Returns `(train, validation)`.
pub fn split_validation<'a>(
    train: &[&'a str],
    fraction: f64,
    seed: u64,
) -> (Vec<&'a str>, Vec<&'a str>) {
    if fraction <= 0.0 || train.len() < 2 {
        return (train.to_vec(), Vec::new());
    }
    let mut ids = train.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1);
    let val = ids.split_off(ids.len() - n_val);
    ids.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (ids, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("rec{i:03}")).collect()
    }

    fn entry(id: &str, high: bool) -> ManifestEntry {
        ManifestEntry {
            record_id: id.into(),
            paths: Vec::new(),
            included: true,
            exclusion_reason: None,
            has_high_quality: high,
            has_low_quality: true,
        }
    }

    #[test]
    fn curation_drops_the_exclusion_list() {
        let mut entries: Vec<ManifestEntry> = ids(101).iter().map(|i| entry(i, true)).collect();
        entries.extend(DEFAULT_EXCLUSIONS.iter().map(|i| entry(i, true)));
        let m = DatasetManifest { entries };
        let excl: Vec<String> = DEFAULT_EXCLUSIONS.iter().map(|s| s.to_string()).collect();
        let c = curate(&m, &excl, true, false);
        c.validate().unwrap();
        assert_eq!(c.entries.len(), 105);
        assert_eq!(c.included().count(), 101);
        assert!(c
            .excluded()
            .all(|e| DEFAULT_EXCLUSIONS.contains(&e.record_id.as_str())));
    }

    #[test]
    fn missing_high_quality_is_flagged() {
        let m = DatasetManifest {
            entries: vec![entry("a", true), entry("b", false)],
        };
        let c = curate(&m, &[], true, false);
        let b = &c.entries[1];
        assert!(!b.included);
        assert_eq!(
            b.exclusion_reason.as_deref(),
            Some("no high-quality labels")
        );
        assert!(curate(&m, &[], false, false).entries[1].included);
        assert!(curate(&DatasetManifest::default(), &[], true, true)
            .entries
            .is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = DatasetManifest {
            entries: vec![entry("a", true), entry("a", true)],
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn fold_sizes_and_determinism() {
        let f = make_folds(&ids(101), 5, 1234).unwrap();
        let mut sizes = f.sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![21, 20, 20, 20, 20]);
        assert_eq!(f, make_folds(&ids(101), 5, 1234).unwrap());
        assert_ne!(f, make_folds(&ids(101), 5, 1235).unwrap());
        let one = make_folds(&ids(7), 1, 3).unwrap();
        assert!(one.assignment.values().all(|&v| v == 0));
        assert!(matches!(
            make_folds(&ids(3), 5, 0),
            Err(HarnessError::TooFewRecords {
                records: 3,
                folds: 5
            })
        ));
        // input order does not matter
        let mut rev = ids(101);
        rev.reverse();
        assert_eq!(make_folds(&rev, 5, 1234).unwrap(), f);
    }

    #[test]
    fn train_and_test_are_disjoint() {
        let f = make_folds(&ids(23), 5, 9).unwrap();
        for k in 0..5 {
            let test: BTreeSet<&str> = f.test_ids(k).into_iter().collect();
            let train: BTreeSet<&str> = f.train_ids(k).into_iter().collect();
            assert!(test.is_disjoint(&train));
            assert_eq!(test.len() + train.len(), 23);
        }
    }

    #[test]
    fn validation_split() {
        let all = ids(10);
        let refs: Vec<&str> = all.iter().map(String::as_str).collect();
        let (t, v) = split_validation(&refs, 0.2, 1);
        assert_eq!((t.len(), v.len()), (8, 2));
        assert!(v.iter().all(|x| !t.contains(x)));
        let (t, v) = split_validation(&refs, 0.0, 1);
        assert_eq!((t.len(), v.len()), (10, 0));
    }
}
