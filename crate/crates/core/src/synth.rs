//! Synthetic ECG with exactly known fiducials.
//!
//! Each wave is a smooth compactly-supported shape (sums of `sin²` lobes), so
//! the signal is exactly zero-baseline outside `[onset, offset]` before noise
//! and wander are added, and the labels are exact by construction. Beats are
//! placed only where the whole P–QRS–T complex fits inside the record.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::wfdb::interchange::LabeledRecord;
use crate::wfdb::{
    FiducialSet, LabelQuality, Record, RecordHeader, StorageFormat, Wave, WaveFiducial,
};

pub const SYNTH_CONDITION: &str = "Synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub fs: f64,
    pub n_samples: usize,
    pub n_leads: usize,
    /// Heart rate is drawn per beat from this range (bpm).
    pub heart_rate: (f64, f64),
    /// White measurement noise SD in mV.
    pub noise_std: f64,
    /// Peak amplitude (mV) of a sinusoidal baseline wander around 0.3 Hz.
    pub wander_mv: f64,
    /// Probability that a beat has a P wave.
    pub p_wave_probability: f64,
    /// Number of leading beats copied into the high-quality set; `None`
    /// labels every beat.
    pub high_quality_beats: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: 250.0,
            n_samples: 250 * 60,
            n_leads: 2,
            heart_rate: (55.0, 95.0),
            noise_std: 0.01,
            wander_mv: 0.05,
            p_wave_probability: 1.0,
            high_quality_beats: Some(30),
        }
    }
}

/// Timing of one beat, in seconds relative to the R peak.
struct BeatShape {
    p: Option<(f64, f64)>,
    qrs: (f64, f64),
    t: (f64, f64),
    amp_p: f64,
    amp_r: f64,
    amp_t: f64,
}

impl BeatShape {
    fn random<R: Rng + ?Sized>(rng: &mut R, with_p: bool) -> Self {
        let qrs_half = rng.random_range(0.038..0.052);
        let p_on = rng.random_range(0.19..0.23);
        let t_on = rng.random_range(0.11..0.14);
        Self {
            p: with_p.then(|| (-p_on, -p_on + rng.random_range(0.08..0.11))),
            qrs: (-qrs_half, qrs_half),
            t: (t_on, t_on + rng.random_range(0.16..0.22)),
            amp_p: rng.random_range(0.1..0.25),
            amp_r: rng.random_range(0.8..1.6),
            amp_t: rng.random_range(0.2..0.45) * if rng.random_bool(0.15) { -1.0 } else { 1.0 },
        }
    }

    /// Earliest and latest offsets from R covered by any wave.
    fn extent(&self) -> (f64, f64) {
        (self.p.map_or(self.qrs.0, |p| p.0), self.t.1)
    }
}

/// `sin²` lobe on `[a, b]` with height `amp`.
fn lobe(signal: &mut [f64], a: f64, b: f64, amp: f64) {
    let lo = a.ceil().max(0.0) as usize;
    let hi = (b.floor() as usize).min(signal.len().saturating_sub(1));
    for (t, s) in signal.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let u = (t as f64 - a) / (b - a);
        *s += amp * (std::f64::consts::PI * u).sin().powi(2);
    }
}

/// One beat's waves added onto `signal`; returns the fiducials.
fn render_beat(
    signal: &mut [f64],
    r: usize,
    fs: f64,
    shape: &BeatShape,
    lead_gain: [f64; 3],
) -> [Option<WaveFiducial>; 3] {
    let at = |dt: f64| (r as f64 + dt * fs).round();
    let mut fid = [None; 3];

    if let Some((p0, p1)) = shape.p {
        let (on, off) = (at(p0), at(p1));
        lobe(signal, on, off, shape.amp_p * lead_gain[0]);
        fid[0] = Some(WaveFiducial::complete(
            on as usize,
            ((on + off) / 2.0).round() as usize,
            off as usize,
        ));
    }

    // Q, R, S lobes tiling [on, off]; the R lobe dominates.
    let (on, off) = (at(shape.qrs.0), at(shape.qrs.1));
    let w = off - on;
    let (q_end, s_start) = (on + 0.3 * w, on + 0.7 * w);
    let peak = (r as f64 - on) / w;
    let r_start = on + (peak - 0.25).max(0.1) * w;
    let r_end = on + (peak + 0.25).min(0.9) * w;
    let g = lead_gain[1];
    lobe(signal, on, q_end, -0.12 * shape.amp_r * g);
    lobe(signal, r_start, r_end, shape.amp_r * g);
    lobe(signal, s_start, off, -0.2 * shape.amp_r * g);
    fid[1] = Some(WaveFiducial::complete(on as usize, r, off as usize));

    // asymmetric T: slow rise, faster fall
    let (on, off) = (at(shape.t.0), at(shape.t.1));
    let top = on + 0.6 * (off - on);
    let amp = shape.amp_t * lead_gain[2];
    let last = signal.len().saturating_sub(1);
    for t in (on as usize)..=(off as usize).min(last) {
        let x = t as f64;
        let u = if x <= top {
            (x - on) / (top - on)
        } else {
            (off - x) / (off - top)
        };
        signal[t] += amp * (std::f64::consts::FRAC_PI_2 * u).sin().powi(2);
    }
    fid[2] = Some(WaveFiducial::complete(
        on as usize,
        top.round() as usize,
        off as usize,
    ));
    fid
}

/// A multi-lead record with every beat labeled in a low-quality set per lead
/// and the first `high_quality_beats` in the shared high-quality set.
pub fn synth_record<R: Rng + ?Sized>(id: &str, cfg: &SynthConfig, rng: &mut R) -> LabeledRecord {
    let n = cfg.n_samples;
    let fs = cfg.fs;
    let mut leads = vec![vec![0.0; n]; cfg.n_leads];
    let gains: Vec<[f64; 3]> = (0..cfg.n_leads)
        .map(|l| {
            if l == 0 {
                [1.0; 3]
            } else {
                [
                    rng.random_range(0.5..1.0),
                    rng.random_range(0.4..0.9),
                    rng.random_range(0.5..1.1),
                ]
            }
        })
        .collect();

    let mut beats: Vec<[Option<WaveFiducial>; 3]> = Vec::new();
    let mut r_peaks = Vec::new();
    let mut r = rng.random_range(0.3..0.6) * fs;
    loop {
        let with_p = rng.random_bool(cfg.p_wave_probability);
        let shape = BeatShape::random(rng, with_p);
        let (lo, hi) = shape.extent();
        let r_idx = r.round();
        if r_idx + hi * fs >= n as f64 - 1.0 {
            break;
        }
        if r_idx + lo * fs >= 0.0 {
            let fids = leads
                .iter_mut()
                .zip(&gains)
                .map(|(lead, g)| render_beat(lead, r_idx as usize, fs, &shape, *g));
            beats.push(fids.last().expect("at least one lead"));
            r_peaks.push(r_idx as usize);
        }
        let hr = rng.random_range(cfg.heart_rate.0..=cfg.heart_rate.1);
        r += 60.0 / hr * fs;
    }

    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("valid sd");
    let wander_f = rng.random_range(0.15..0.45);
    for lead in leads.iter_mut() {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for (t, s) in lead.iter_mut().enumerate() {
            *s += cfg.wander_mv * (std::f64::consts::TAU * wander_f * t as f64 / fs + phase).sin();
            if cfg.noise_std > 0.0 {
                *s += noise.sample(rng);
            }
        }
    }

    let signal = Array2::from_shape_fn((n, cfg.n_leads), |(t, l)| leads[l][t]);
    let header = RecordHeader {
        record_id: id.to_string(),
        n_leads: cfg.n_leads,
        fs,
        n_samples: n,
        gain: vec![200.0; cfg.n_leads],
        baseline: vec![0.0; cfg.n_leads],
        storage_format: StorageFormat::TextCsv,
        files: Vec::new(),
        lead_names: (0..cfg.n_leads).map(|l| format!("lead{l}")).collect(),
    };
    let record = Record::new(header, signal).expect("synthetic record is well-formed");

    let set_of = |beats: &[[Option<WaveFiducial>; 3]], quality, lead| {
        let mut set = FiducialSet::new(quality, lead);
        for beat in beats {
            for wave in Wave::ALL {
                if let Some(f) = beat[wave.index()] {
                    set.wave_mut(wave).push(f);
                }
            }
        }
        set
    };
    let n_high = cfg
        .high_quality_beats
        .unwrap_or(beats.len())
        .min(beats.len());
    let mut labeled = LabeledRecord::new(record);
    labeled
        .fiducials
        .push(set_of(&beats[..n_high], LabelQuality::High, None));
    for lead in 0..cfg.n_leads {
        labeled
            .fiducials
            .push(set_of(&beats, LabelQuality::Low, Some(lead)));
    }
    labeled.reference_beats = Some(r_peaks);
    labeled.condition = Some(SYNTH_CONDITION.to_string());
    labeled
}

/// A single-lead, fully labeled, noise-light window of `len` samples.
pub fn synth_window<R: Rng + ?Sized>(len: usize, fs: f64, rng: &mut R) -> (Vec<f64>, FiducialSet) {
    let cfg = SynthConfig {
        fs,
        n_samples: len,
        n_leads: 1,
        noise_std: 0.005,
        wander_mv: 0.02,
        high_quality_beats: None,
        ..SynthConfig::default()
    };
    let rec = synth_record("window", &cfg, rng);
    let set = rec.high_quality().expect("high-quality set").clone();
    (rec.record.lead(0), set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::encode_mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fiducials_are_valid_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = synth_record("s1", &SynthConfig::default(), &mut rng);
        assert_eq!(rec.record.n_leads(), 2);
        let hq = rec.high_quality().unwrap();
        hq.validate(Some(rec.record.n_samples())).unwrap();
        assert_eq!(hq.wave(Wave::Qrs).len(), 30);
        let lq = rec.low_quality(1).unwrap();
        let n_beats = lq.wave(Wave::Qrs).len();
        assert!((55..=100).contains(&n_beats), "{n_beats} beats in a minute");
        assert_eq!(rec.reference_beats.as_ref().unwrap().len(), n_beats);
        // P < QRS < T within each beat, and no overlap across waves
        let mut spans: Vec<(usize, usize)> = Wave::ALL
            .iter()
            .flat_map(|&w| lq.wave(w).iter().map(|f| f.interval().unwrap()))
            .collect();
        spans.sort();
        assert!(
            spans.windows(2).all(|w| w[0].1 < w[1].0),
            "overlapping waves"
        );
        encode_mask(lq, rec.record.n_samples(), rec.record.fs()).unwrap();
    }

    #[test]
    fn signal_is_baseline_outside_waves_without_noise() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            wander_mv: 0.0,
            n_samples: 2500,
            ..SynthConfig::default()
        };
        let rec = synth_record("s2", &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let mask = encode_mask(rec.low_quality(0).unwrap(), 2500, 250.0).unwrap();
        let x = rec.record.lead(0);
        for (t, &v) in x.iter().enumerate() {
            let inside = (0..3).any(|c| mask.channels()[[t, c]] == 1.0);
            if !inside {
                assert_eq!(v, 0.0, "sample {t}");
            }
        }
        let qrs = &rec.low_quality(0).unwrap().wave(Wave::Qrs)[0];
        let r = qrs.peak.unwrap();
        let window = &x[qrs.onset.unwrap()..=qrs.offset.unwrap()];
        let max = window.iter().cloned().fold(f64::MIN, f64::max);
        assert!((x[r] - max).abs() < 0.05 * max, "R peak near the maximum");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = synth_record(
            "s",
            &SynthConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let b = synth_record(
            "s",
            &SynthConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert_eq!(a, b);
        let (x, set) = synth_window(512, 250.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(x.len(), 512);
        assert!(!set.wave(Wave::Qrs).is_empty());
    }

    #[test]
    fn missing_p_waves() {
        let cfg = SynthConfig {
            p_wave_probability: 0.0,
            ..SynthConfig::default()
        };
        let rec = synth_record("s", &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(rec.low_quality(0).unwrap().wave(Wave::P).is_empty());
        assert!(!rec.low_quality(0).unwrap().wave(Wave::T).is_empty());
    }
}
