//! Fiducials to 3-channel (P, QRS, T) segmentation masks and back.
//!
//! A wave occupies the closed interval `[onset, offset]`: both endpoints are
//! labeled. Channels are independent, so overlapping waves are representable.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::wfdb::{FiducialSet, LabelQuality, Wave, WaveFiducial};

pub const N_CHANNELS: usize = 3;
pub const DEFAULT_THRESHOLD: f32 = 0.5;
/// Default minimum run duration in seconds (10 samples at 250 Hz).
pub const DEFAULT_MIN_RUN_SECONDS: f64 = 0.04;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MaskError {
    #[error("{wave}[{index}] has an onset or offset without its pair")]
    UnpairedFiducial { wave: Wave, index: usize },
    #[error("{wave}[{index}] interval ({onset}, {offset}) lies outside a {n_samples}-sample mask")]
    OutOfRange {
        wave: Wave,
        index: usize,
        onset: usize,
        offset: usize,
        n_samples: usize,
    },
    #[error("mask shape: {0}")]
    Shape(String),
    #[error("mask value {value} not allowed for {kind:?}")]
    InvalidValue { value: f32, kind: MaskKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Values in {0, 1}.
    GroundTruth,
    /// Values in [0, 1].
    Prediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelineationMask {
    channels: Array2<f32>,
    fs: f64,
    kind: MaskKind,
}

impl DelineationMask {
    /// `channels` is `[n_samples, 3]`, ordered (P, QRS, T).
    pub fn new(channels: Array2<f32>, fs: f64, kind: MaskKind) -> Result<Self, MaskError> {
        if channels.ncols() != N_CHANNELS {
            return Err(MaskError::Shape(format!(
                "expected 3 channels, found {}",
                channels.ncols()
            )));
        }
        let ok = |v: f32| match kind {
            MaskKind::GroundTruth => v == 0.0 || v == 1.0,
            MaskKind::Prediction => (0.0..=1.0).contains(&v),
        };
        if let Some(&value) = channels.iter().find(|&&v| !ok(v)) {
            return Err(MaskError::InvalidValue { value, kind });
        }
        Ok(Self { channels, fs, kind })
    }

    pub fn zeros(n_samples: usize, fs: f64) -> Self {
        Self {
            channels: Array2::zeros((n_samples, N_CHANNELS)),
            fs,
            kind: MaskKind::GroundTruth,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.channels.nrows()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn channels(&self) -> &Array2<f32> {
        &self.channels
    }

    pub fn into_channels(self) -> Array2<f32> {
        self.channels
    }

    pub fn channel(&self, wave: Wave) -> ArrayView1<'_, f32> {
        self.channels.column(wave.index())
    }

    /// Rows `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            channels: self.channels.slice(s![start..start + len, ..]).to_owned(),
            fs: self.fs,
            kind: self.kind,
        }
    }

    /// Thresholds a prediction into a ground-truth style {0, 1} mask.
    pub fn binarize(&self, threshold: f32) -> Self {
        Self {
            channels: self
                .channels
                .mapv(|v| if v >= threshold { 1.0 } else { 0.0 }),
            fs: self.fs,
            kind: MaskKind::GroundTruth,
        }
    }
}

/// Per-wave closed `(onset, offset)` intervals, disjoint and sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveIntervals {
    pub waves: [Vec<(usize, usize)>; 3],
}

impl WaveIntervals {
    pub fn wave(&self, wave: Wave) -> &[(usize, usize)] {
        &self.waves[wave.index()]
    }

    /// The interval view of a fiducial set: each wave with both an onset and
    /// an offset, with overlapping or touching intervals of the same wave
    /// merged (the mask cannot tell them apart).
    pub fn from_fiducials(set: &FiducialSet) -> Self {
        let mut out = Self::default();
        for wave in Wave::ALL {
            let mut iv: Vec<(usize, usize)> =
                set.wave(wave).iter().filter_map(|w| w.interval()).collect();
            iv.sort_unstable();
            let mut merged: Vec<(usize, usize)> = Vec::with_capacity(iv.len());
            for (on, off) in iv {
                match merged.last_mut() {
                    Some(last) if on <= last.1 + 1 => last.1 = last.1.max(off),
                    _ => merged.push((on, off)),
                }
            }
            out.waves[wave.index()] = merged;
        }
        out
    }
}

/// Labels channel `c` with 1 on every closed interval `[on[m], off[m]]` of
/// wave `c`. Waves with neither onset nor offset are ignored; a wave with
/// only one of them is an error.
pub fn encode_mask(
    set: &FiducialSet,
    n_samples: usize,
    fs: f64,
) -> Result<DelineationMask, MaskError> {
    let mut channels = Array2::<f32>::zeros((n_samples, N_CHANNELS));
    for wave in Wave::ALL {
        for (index, w) in set.wave(wave).iter().enumerate() {
            let (onset, offset) = match (w.onset, w.offset) {
                (Some(on), Some(off)) => (on, off),
                (None, None) => continue,
                _ => return Err(MaskError::UnpairedFiducial { wave, index }),
            };
            if onset > offset || offset >= n_samples {
                return Err(MaskError::OutOfRange {
                    wave,
                    index,
                    onset,
                    offset,
                    n_samples,
                });
            }
            channels
                .slice_mut(s![onset..=offset, wave.index()])
                .fill(1.0);
        }
    }
    Ok(DelineationMask {
        channels,
        fs,
        kind: MaskKind::GroundTruth,
    })
}

/// Maximal runs of `value >= threshold` per channel, keeping runs of at
/// least `min_run` samples.
pub fn decode_mask(mask: &DelineationMask, threshold: f32, min_run: usize) -> WaveIntervals {
    let mut out = WaveIntervals::default();
    for wave in Wave::ALL {
        out.waves[wave.index()] = runs(mask.channel(wave), threshold, min_run.max(1));
    }
    out
}

fn runs(channel: ArrayView1<'_, f32>, threshold: f32, min_run: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in channel.iter().enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s0)) => {
                if i - s0 >= min_run {
                    out.push((s0, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = start {
        if channel.len() - s0 >= min_run {
            out.push((s0, channel.len() - 1));
        }
    }
    out
}

/// Default minimum run in samples for a sampling frequency.
pub fn default_min_run(fs: f64) -> usize {
    ((DEFAULT_MIN_RUN_SECONDS * fs).round() as usize).max(1)
}

/// Turns intervals into fiducials. The peak is the sample of maximum
/// absolute deflection inside the interval when a signal is given, else the
/// interval midpoint.
pub fn intervals_to_fiducials(
    intervals: &WaveIntervals,
    signal: Option<&[f64]>,
    quality: LabelQuality,
    lead: Option<usize>,
) -> FiducialSet {
    let mut set = FiducialSet::new(quality, lead);
    for wave in Wave::ALL {
        *set.wave_mut(wave) = intervals
            .wave(wave)
            .iter()
            .map(|&(on, off)| {
                let peak = match signal {
                    Some(x) if off < x.len() => {
                        (on..=off)
                            .fold((on, f64::NEG_INFINITY), |best, i| {
                                if x[i].abs() > best.1 {
                                    (i, x[i].abs())
                                } else {
                                    best
                                }
                            })
                            .0
                    }
                    _ => (on + off) / 2,
                };
                WaveFiducial::complete(on, peak, off)
            })
            .collect();
    }
    set
}

/// Run-length form of a mask for the JSON interchange: `runs[wave]` lists
/// closed `[start, end]` runs of ones after thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDocument {
    pub fs: f64,
    pub n_samples: usize,
    pub kind: MaskKind,
    pub threshold: f32,
    pub runs: BTreeMap<String, Vec<[usize; 2]>>,
}

impl MaskDocument {
    pub fn from_mask(mask: &DelineationMask, threshold: f32) -> Self {
        let iv = decode_mask(mask, threshold, 1);
        let runs = Wave::ALL
            .iter()
            .map(|&w| {
                (
                    w.name().to_string(),
                    iv.wave(w).iter().map(|&(a, b)| [a, b]).collect(),
                )
            })
            .collect();
        Self {
            fs: mask.fs,
            n_samples: mask.n_samples(),
            kind: mask.kind,
            threshold,
            runs,
        }
    }

    /// Rebuilds the binary mask the runs describe.
    pub fn to_mask(&self) -> Result<DelineationMask, MaskError> {
        let mut channels = Array2::<f32>::zeros((self.n_samples, N_CHANNELS));
        for wave in Wave::ALL {
            for (index, &[a, b]) in self.runs.get(wave.name()).into_iter().flatten().enumerate() {
                if a > b || b >= self.n_samples {
                    return Err(MaskError::OutOfRange {
                        wave,
                        index,
                        onset: a,
                        offset: b,
                        n_samples: self.n_samples,
                    });
                }
                channels.slice_mut(s![a..=b, wave.index()]).fill(1.0);
            }
        }
        Ok(DelineationMask {
            channels,
            fs: self.fs,
            kind: MaskKind::GroundTruth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn set_with(wave: Wave, items: &[(usize, usize)]) -> FiducialSet {
        let mut set = FiducialSet::new(LabelQuality::High, None);
        *set.wave_mut(wave) = items
            .iter()
            .map(|&(a, b)| WaveFiducial::complete(a, (a + b) / 2, b))
            .collect();
        set
    }

    fn channel_vec(mask: &DelineationMask, wave: Wave) -> Vec<f32> {
        mask.channel(wave).to_vec()
    }

    fn pred_from(ch: &[f32]) -> DelineationMask {
        let mut a = Array2::zeros((ch.len(), 3));
        a.column_mut(0).assign(&Array1::from(ch.to_vec()));
        DelineationMask::new(a, 250.0, MaskKind::Prediction).unwrap()
    }

    #[test]
    fn encode_closed_interval() {
        let m = encode_mask(&set_with(Wave::P, &[(2, 4)]), 8, 250.0).unwrap();
        assert_eq!(
            channel_vec(&m, Wave::P),
            vec![0., 0., 1., 1., 1., 0., 0., 0.]
        );
    }

    #[test]
    fn encode_empty_set() {
        let m = encode_mask(&FiducialSet::new(LabelQuality::High, None), 5, 250.0).unwrap();
        assert_eq!(m.channels().dim(), (5, 3));
        assert!(m.channels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_boundary_touching_intervals() {
        let m = encode_mask(&set_with(Wave::Qrs, &[(0, 1), (6, 7)]), 8, 250.0).unwrap();
        assert_eq!(
            channel_vec(&m, Wave::Qrs),
            vec![1., 1., 0., 0., 0., 0., 1., 1.]
        );
    }

    #[test]
    fn encode_rejects_unpaired_and_out_of_range() {
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::T).push(WaveFiducial {
            onset: None,
            peak: Some(3),
            offset: Some(5),
        });
        assert_eq!(
            encode_mask(&set, 8, 250.0),
            Err(MaskError::UnpairedFiducial {
                wave: Wave::T,
                index: 0
            })
        );
        assert!(matches!(
            encode_mask(&set_with(Wave::P, &[(2, 9)]), 8, 250.0),
            Err(MaskError::OutOfRange { .. })
        ));
        // peak-only waves carry no interval and are skipped
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::P).push(WaveFiducial {
            onset: None,
            peak: Some(3),
            offset: None,
        });
        assert!(encode_mask(&set, 8, 250.0).is_ok());
    }

    #[test]
    fn decode_examples() {
        let iv = decode_mask(&pred_from(&[0., 1., 1., 0.]), 0.5, 1);
        assert_eq!(iv.wave(Wave::P), &[(1, 2)]);
        assert!(decode_mask(&pred_from(&[0.; 6]), 0.5, 1)
            .wave(Wave::P)
            .is_empty());
        let iv = decode_mask(&pred_from(&[0.9, 0.2, 0.6, 0.7, 0.8, 0.1, 1.0]), 0.5, 2);
        assert_eq!(iv.wave(Wave::P), &[(2, 4)]);
    }

    #[test]
    fn prediction_values_are_range_checked() {
        let a = Array2::from_elem((2, 3), 1.5f32);
        assert!(DelineationMask::new(a, 250.0, MaskKind::Prediction).is_err());
        let a = Array2::from_elem((2, 3), 0.5f32);
        assert!(DelineationMask::new(a.clone(), 250.0, MaskKind::Prediction).is_ok());
        assert!(DelineationMask::new(a, 250.0, MaskKind::GroundTruth).is_err());
        assert!(DelineationMask::new(Array2::zeros((2, 2)), 250.0, MaskKind::Prediction).is_err());
    }

    #[test]
    fn peaks_from_intervals() {
        let mut iv = WaveIntervals::default();
        iv.waves[0] = vec![(4, 8), (0, 0)];
        let set = intervals_to_fiducials(&iv, None, LabelQuality::Low, None);
        assert_eq!(set.peaks(Wave::P), vec![6, 0]);

        let mut iv = WaveIntervals::default();
        iv.waves[1] = vec![(2, 6)];
        let x = [0.0, 0.0, 1.0, 5.0, -9.0, 2.0, 0.0, 0.0];
        let set = intervals_to_fiducials(&iv, Some(&x), LabelQuality::Low, Some(0));
        assert_eq!(set.wave(Wave::Qrs), &[WaveFiducial::complete(2, 4, 6)]);
    }

    #[test]
    fn mask_document_round_trip() {
        let m = encode_mask(&set_with(Wave::T, &[(1, 3), (7, 9)]), 12, 250.0).unwrap();
        let doc = MaskDocument::from_mask(&m, 0.5);
        assert_eq!(doc.runs["T"], vec![[1, 3], [7, 9]]);
        let json = serde_json::to_string(&doc).unwrap();
        let back: MaskDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_mask().unwrap(), m);
    }

    #[test]
    fn default_min_run_at_250_hz() {
        assert_eq!(default_min_run(250.0), 10);
        assert_eq!(default_min_run(1.0), 1);
    }

    fn arb_set(n: usize) -> impl Strategy<Value = FiducialSet> {
        let wave = move || {
            prop::collection::vec((0..n, 0usize..20), 0..8).prop_map(move |raw| {
                raw.into_iter()
                    .map(|(on, len)| {
                        let off = (on + len).min(n - 1);
                        WaveFiducial::complete(on, (on + off) / 2, off)
                    })
                    .collect::<Vec<_>>()
            })
        };
        (wave(), wave(), wave()).prop_map(|(p, q, t)| {
            let mut set = FiducialSet::new(LabelQuality::High, None);
            set.waves = [p, q, t];
            set.sort();
            set
        })
    }

    proptest! {
        #[test]
        fn decode_encode_gives_interval_view(set in arb_set(120)) {
            let m = encode_mask(&set, 120, 250.0).unwrap();
            prop_assert_eq!(decode_mask(&m, 0.5, 1), WaveIntervals::from_fiducials(&set));
        }

        #[test]
        fn encode_is_idempotent_after_round_trip(set in arb_set(120)) {
            let m = encode_mask(&set, 120, 250.0).unwrap();
            let again = intervals_to_fiducials(&decode_mask(&m, 0.5, 1), None, LabelQuality::High, None);
            prop_assert_eq!(encode_mask(&again, 120, 250.0).unwrap(), m);
        }

        #[test]
        fn raising_threshold_never_lengthens_runs(values in prop::collection::vec(0.0f32..=1.0, 1..80), t1 in 0.01f32..0.99, dt in 0.0f32..0.5) {
            let t2 = (t1 + dt).min(0.99);
            let m = pred_from(&values);
            let lo = decode_mask(&m, t1, 1);
            let hi = decode_mask(&m, t2, 1);
            // every high-threshold run is contained in some low-threshold run
            for &(a, b) in hi.wave(Wave::P) {
                prop_assert!(lo.wave(Wave::P).iter().any(|&(c, d)| c <= a && b <= d));
            }
            let total = |iv: &WaveIntervals| iv.wave(Wave::P).iter().map(|(a, b)| b - a + 1).sum::<usize>();
            prop_assert!(total(&hi) <= total(&lo));
        }
    }

    #[test]
    fn channel_sums_match_interval_lengths() {
        let set = set_with(Wave::Qrs, &[(3, 9), (20, 31)]);
        let m = encode_mask(&set, 40, 250.0).unwrap();
        assert_eq!(m.channel(Wave::Qrs).sum(), (7 + 12) as f32);
    }
}
