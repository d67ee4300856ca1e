use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{HarnessError, LeadMode};
use crate::mask::{encode_mask, DelineationMask};
use crate::metrics::{labeled_span, mask_dice};
use crate::wfdb::interchange::LabeledRecord;
use crate::wfdb::{FiducialSet, LabelQuality, Wave, WaveFiducial};

/// Slack (seconds) when matching a reference beat to a labeled QRS.
const BEAT_TOLERANCE_S: f64 = 0.04;
/// How far (seconds) a beat's P wave may precede, and its T wave follow, the
/// R peak. Unlabeled beats this close to a window reject it.
const BEAT_REACH_BEFORE_S: f64 = 0.3;
const BEAT_REACH_AFTER_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeadSelector {
    Lead(usize),
    All,
}

/// One training example: `signal` is `[len, channels]`, `mask` `[len, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub record_id: String,
    pub lead: LeadSelector,
    pub start: usize,
    pub quality: LabelQuality,
    pub signal: Array2<f32>,
    pub mask: Array2<f32>,
    /// QRS onsets relative to `start`, for QRS-locked noise.
    pub qrs_onsets: Vec<usize>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.signal.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.nrows() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSet {
    pub window_len: usize,
    pub windows: Vec<Window>,
}

/// Waves with both boundaries, and the sample positions of every fiducial
/// that belongs to an incomplete wave.
fn split_complete(set: &FiducialSet) -> (FiducialSet, Vec<usize>) {
    let mut complete = FiducialSet::new(set.quality, set.lead);
    let mut incomplete = Vec::new();
    for wave in Wave::ALL {
        for f in set.wave(wave) {
            if f.interval().is_some() {
                complete.wave_mut(wave).push(*f);
            } else {
                incomplete.extend(f.points());
            }
        }
    }
    incomplete.sort_unstable();
    (complete, incomplete)
}

fn mean_dice(d: [f64; 3]) -> f64 {
    d.iter().sum::<f64>() / 3.0
}

/// The lead whose low-quality labels agree best (mean Dice over P, QRS, T
/// inside the labeled span) with the high-quality labels. Falls back to the
/// lowest lead with low-quality labels when there is no reference.
pub fn best_low_quality_lead(rec: &LabeledRecord) -> Option<usize> {
    let leads: Vec<usize> = (0..rec.record.n_leads())
        .filter(|&l| rec.low_quality(l).is_some())
        .collect();
    let n = rec.record.n_samples();
    let fs = rec.record.fs();
    let Some(hq) = rec.high_quality() else {
        return leads.first().copied();
    };
    let truth = encode_mask(&split_complete(hq).0, n, fs).ok()?;
    let span = labeled_span(hq);
    let mut best: Option<(usize, f64)> = None;
    for l in leads {
        let lq = split_complete(rec.low_quality(l).expect("filtered")).0;
        let Ok(m) = encode_mask(&lq, n, fs) else {
            continue;
        };
        let Ok(d) = mask_dice(&m, &truth, 0.5, span.clone()) else {
            continue;
        };
        let d = mean_dice(d);
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((l, d));
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy)]
struct Reach {
    before: usize,
    after: usize,
    tolerance: usize,
}

struct LabelView {
    mask: DelineationMask,
    qrs: Vec<(usize, usize)>,
    qrs_onsets: Vec<usize>,
    incomplete: Vec<usize>,
}

impl LabelView {
    fn new(set: &FiducialSet, n: usize, fs: f64) -> Result<Self, HarnessError> {
        let (complete, incomplete) = split_complete(set);
        let mask = encode_mask(&complete, n, fs)?;
        let qrs: Vec<(usize, usize)> = complete
            .wave(Wave::Qrs)
            .iter()
            .filter_map(WaveFiducial::interval)
            .collect();
        let qrs_onsets = qrs.iter().map(|q| q.0).collect();
        Ok(Self {
            mask,
            qrs,
            qrs_onsets,
            incomplete,
        })
    }

    /// Every reference beat whose waves can reach into `[a, b)` lies within
    /// a labeled QRS, no incomplete wave touches the window, and at least one
    /// QRS is labeled.
    fn accepts(&self, a: usize, b: usize, beats: &[usize], reach: Reach) -> bool {
        let inside = |x: usize| (a..b).contains(&x);
        if self.incomplete.iter().any(|&x| inside(x)) {
            return false;
        }
        if !self.qrs.iter().any(|&(on, off)| on < b && off >= a) {
            return false;
        }
        let tol = reach.tolerance;
        let near = |x: usize| x + reach.after >= a && x < b + reach.before;
        beats.iter().filter(|&&x| near(x)).all(|&x| {
            self.qrs
                .iter()
                .any(|&(on, off)| on <= x + tol && x <= off + tol)
        })
    }
}

/// Sliding windows over a record using one label set.
///
/// High-quality labels are shared by all leads; low-quality labels are per
/// lead, and in multi-lead mode the lead chosen by
/// [`best_low_quality_lead`] supplies the shared mask. Records lacking the
/// requested labels yield no windows.
pub fn make_windows(
    rec: &LabeledRecord,
    quality: LabelQuality,
    lead_mode: LeadMode,
    window_len: usize,
    stride: usize,
) -> Result<Vec<Window>, HarnessError> {
    let n = rec.record.n_samples();
    let fs = rec.record.fs();
    if window_len > n {
        return Err(HarnessError::WindowTooLong {
            window: window_len,
            n_samples: n,
        });
    }
    if window_len == 0 || stride == 0 {
        return Err(HarnessError::Config(
            "window length and stride must be positive".into(),
        ));
    }
    let n_leads = rec.record.n_leads();
    // (input leads, label set) pairs
    let jobs: Vec<(LeadSelector, &FiducialSet)> = match (quality, lead_mode) {
        (LabelQuality::High, LeadMode::Single) => match rec.high_quality() {
            Some(hq) => (0..n_leads).map(|l| (LeadSelector::Lead(l), hq)).collect(),
            None => Vec::new(),
        },
        (LabelQuality::High, LeadMode::Multi) => rec
            .high_quality()
            .map(|hq| (LeadSelector::All, hq))
            .into_iter()
            .collect(),
        (LabelQuality::Low, LeadMode::Single) => (0..n_leads)
            .filter_map(|l| rec.low_quality(l).map(|s| (LeadSelector::Lead(l), s)))
            .collect(),
        (LabelQuality::Low, LeadMode::Multi) => best_low_quality_lead(rec)
            .and_then(|l| rec.low_quality(l))
            .map(|s| (LeadSelector::All, s))
            .into_iter()
            .collect(),
    };

    let samples = |sec: f64| (sec * fs).round() as usize;
    let reach = Reach {
        before: samples(BEAT_REACH_BEFORE_S),
        after: samples(BEAT_REACH_AFTER_S),
        tolerance: samples(BEAT_TOLERANCE_S),
    };
    let mut out = Vec::new();
    for (lead, set) in jobs {
        let view = LabelView::new(set, n, fs)?;
        let own_beats: Vec<usize>;
        let beats: &[usize] = match &rec.reference_beats {
            Some(b) => b,
            None => {
                own_beats = set
                    .wave(Wave::Qrs)
                    .iter()
                    .filter_map(|f| f.anchor())
                    .collect();
                &own_beats
            }
        };
        let span = if rec.reference_beats.is_none() {
            labeled_span(set)
        } else {
            Some(0..n)
        };
        let Some(span) = span else { continue };
        let mut start = 0;
        while start + window_len <= n {
            let end = start + window_len;
            if start >= span.start && end <= span.end && view.accepts(start, end, beats, reach) {
                let signal = match lead {
                    LeadSelector::Lead(l) => rec
                        .record
                        .signal
                        .slice(s![start..end, l..=l])
                        .mapv(|v| v as f32),
                    LeadSelector::All => rec
                        .record
                        .signal
                        .slice(s![start..end, ..])
                        .mapv(|v| v as f32),
                };
                out.push(Window {
                    record_id: rec.id().to_string(),
                    lead,
                    start,
                    quality,
                    signal,
                    mask: view.mask.channels().slice(s![start..end, ..]).to_owned(),
                    qrs_onsets: view
                        .qrs_onsets
                        .iter()
                        .filter(|&&x| (start..end).contains(&x))
                        .map(|&x| x - start)
                        .collect(),
                });
            }
            start += stride;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_record, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(seed: u64) -> LabeledRecord {
        let cfg = SynthConfig {
            n_samples: 2048 * 4,
            high_quality_beats: None,
            ..SynthConfig::default()
        };
        synth_record("syn", &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn fully_labeled_record_tiles_completely() {
        let rec = record(1);
        let w = make_windows(&rec, LabelQuality::High, LeadMode::Multi, 2048, 2048).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].signal.dim(), (2048, 2));
        assert_eq!(w[0].mask.dim(), (2048, 3));
        let single = make_windows(&rec, LabelQuality::High, LeadMode::Single, 2048, 2048).unwrap();
        assert_eq!(single.len(), 8);
        assert_eq!(single[0].signal.dim(), (2048, 1));
        assert_eq!(
            single[0].mask, single[4].mask,
            "high-quality labels are shared"
        );
        let half = make_windows(&rec, LabelQuality::High, LeadMode::Multi, 2048, 1024).unwrap();
        assert_eq!(half.len(), 7);
    }

    #[test]
    fn window_over_unlabeled_beat_is_rejected() {
        let mut rec = record(2);
        // drop the label of one beat in the third window
        let hq = rec
            .fiducials
            .iter_mut()
            .find(|f| f.quality == LabelQuality::High)
            .unwrap();
        let victim = hq
            .wave(Wave::Qrs)
            .iter()
            .position(|f| f.peak.unwrap() > 2 * 2048 + 600)
            .unwrap();
        let peak = hq.wave(Wave::Qrs)[victim].peak.unwrap();
        hq.wave_mut(Wave::Qrs).remove(victim);
        let w = make_windows(&rec, LabelQuality::High, LeadMode::Multi, 2048, 2048).unwrap();
        assert!(w.iter().all(|w| !(w.start..w.start + 2048).contains(&peak)));
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn incomplete_wave_rejects_window() {
        let mut rec = record(3);
        let hq = rec
            .fiducials
            .iter_mut()
            .find(|f| f.quality == LabelQuality::High)
            .unwrap();
        hq.wave_mut(Wave::T)[0].offset = None;
        let w = make_windows(&rec, LabelQuality::High, LeadMode::Multi, 2048, 2048).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|w| w.start != 0));
    }

    #[test]
    fn low_quality_lead_choice() {
        let mut rec = record(4);
        // corrupt lead 0's automatic labels
        let lq0 = rec
            .fiducials
            .iter_mut()
            .find(|f| f.quality == LabelQuality::Low && f.lead == Some(0))
            .unwrap();
        for f in lq0.wave_mut(Wave::T) {
            f.onset = f.onset.map(|x| x + 15);
        }
        assert_eq!(best_low_quality_lead(&rec), Some(1));
        let w = make_windows(&rec, LabelQuality::Low, LeadMode::Multi, 2048, 2048).unwrap();
        let lq1 = rec.low_quality(1).unwrap().clone();
        let m = encode_mask(&lq1, rec.record.n_samples(), 250.0).unwrap();
        assert_eq!(w[0].mask, m.channels().slice(s![0..2048, ..]).to_owned());
        assert!(w.iter().all(|w| w.quality == LabelQuality::Low));
    }

    #[test]
    fn too_long_window_is_an_error() {
        let rec = record(5);
        assert!(matches!(
            make_windows(&rec, LabelQuality::High, LeadMode::Single, 2048 * 5, 2048),
            Err(HarnessError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn partially_labeled_record_stays_inside_labels() {
        let cfg = SynthConfig {
            n_samples: 2048 * 8,
            high_quality_beats: Some(20),
            ..SynthConfig::default()
        };
        let rec = synth_record("p", &cfg, &mut ChaCha8Rng::seed_from_u64(6));
        let last = rec
            .high_quality()
            .unwrap()
            .wave(Wave::T)
            .last()
            .unwrap()
            .offset
            .unwrap();
        let w = make_windows(&rec, LabelQuality::High, LeadMode::Single, 1024, 512).unwrap();
        assert!(!w.is_empty());
        let next_beat = rec
            .reference_beats
            .as_ref()
            .unwrap()
            .iter()
            .copied()
            .find(|&b| b > last)
            .unwrap();
        assert!(w.iter().all(|w| w.start + 1024 + 75 <= next_beat));
    }
}
