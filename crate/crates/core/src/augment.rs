//! ECG-specific additive noise at a target signal-to-noise ratio.
//!
//! Every source is scaled from the noise power `Pn = Ps / 10^(SNR/10)`,
//! where `Ps` is the mean squared value of the window being augmented:
//!
//! | kind | realization |
//! |------|-------------|
//! | AWGN | `N(0, sqrt(Pn))` i.i.d. |
//! | random spikes | spike kernel `Sp` scaled by `sqrt(Pn / f)`, every `round(fs / f)` samples |
//! | amplifier saturation | clips the window at `Sv = p * max|x|` |
//! | pacemaker spikes | `sqrt(Pn / f)` spike at every QRS onset |
//! | powerline / baseline wander | `sqrt(2 Pn) cos(2 pi f n / fs + phase)` |
//!
//! `Sp = [0, 0.15, 1.5, -0.25, 0.15] + U(-0.25, 0.25)` per tap, centered on
//! the spike sample and truncated at the window edges.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const SPIKE_KERNEL: [f64; 5] = [0.0, 0.15, 1.5, -0.25, 0.15];
const SPIKE_TAP_JITTER: f64 = 0.25;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AugmentError {
    #[error("{kind:?} noise requires {param}")]
    MissingParameter {
        kind: NoiseKind,
        param: &'static str,
    },
    #[error("cannot augment an empty window")]
    EmptyWindow,
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "AWGN")]
    Awgn,
    #[serde(rename = "RS")]
    RandomSpikes,
    #[serde(rename = "AS")]
    AmplifierSaturation,
    #[serde(rename = "PS")]
    PacemakerSpikes,
    #[serde(rename = "PN")]
    Powerline,
    #[serde(rename = "BW")]
    BaselineWander,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::Awgn,
        NoiseKind::RandomSpikes,
        NoiseKind::AmplifierSaturation,
        NoiseKind::PacemakerSpikes,
        NoiseKind::Powerline,
        NoiseKind::BaselineWander,
    ];

    fn needs_frequency(self) -> bool {
        !matches!(self, NoiseKind::Awgn | NoiseKind::AmplifierSaturation)
    }
}

/// A frequency in Hz, fixed or drawn uniformly per window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Frequency {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl Frequency {
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Frequency::Fixed(f) => f,
            Frequency::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

/// Shape of a pacemaker spike.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeShape {
    /// The 5-tap `Sp` kernel.
    #[default]
    Kernel,
    /// A single sample of height `sqrt(Pn / f)`.
    Impulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    /// Spike rate or sinusoid frequency. Unused by AWGN and AS.
    #[serde(default)]
    pub f: Option<Frequency>,
    /// Saturation fraction of `max|x|` (AS only).
    #[serde(default)]
    pub p: Option<f64>,
    /// Redraw SNR and `f` per window as `value + U(-SNR/10, SNR/10)`.
    #[serde(default = "default_true")]
    pub jitter: bool,
    /// Chance of applying this source to a given window.
    #[serde(default = "default_probability")]
    pub probability: f64,
    #[serde(default)]
    pub spike_shape: SpikeShape,
}

fn default_true() -> bool {
    true
}

fn default_probability() -> f64 {
    1.0
}

impl AugmentSpec {
    pub fn new(kind: NoiseKind, snr_db: f64) -> Self {
        Self {
            kind,
            snr_db,
            f: None,
            p: None,
            jitter: false,
            probability: 1.0,
            spike_shape: SpikeShape::Kernel,
        }
    }

    pub fn with_frequency(mut self, f: f64) -> Self {
        self.f = Some(Frequency::Fixed(f));
        self
    }

    pub fn with_saturation(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_jitter(mut self, jitter: bool) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_probability(mut self, probability: f64) -> Self {
        self.probability = probability;
        self
    }

    /// A spec with the built-in parameter defaults for `kind`: powerline at
    /// 50 Hz, baseline wander in U(0.05, 0.5) Hz, random spikes in
    /// U(0.5, 3) Hz, pacemaker spikes with `f = 1`, saturation at 0.8.
    pub fn with_defaults(kind: NoiseKind, snr_db: f64) -> Self {
        let mut spec = Self::new(kind, snr_db).with_jitter(true);
        match kind {
            NoiseKind::Awgn => {}
            NoiseKind::RandomSpikes => spec.f = Some(Frequency::Uniform { lo: 0.5, hi: 3.0 }),
            NoiseKind::AmplifierSaturation => spec.p = Some(0.8),
            NoiseKind::PacemakerSpikes => spec.f = Some(Frequency::Fixed(1.0)),
            NoiseKind::Powerline => spec.f = Some(Frequency::Fixed(50.0)),
            NoiseKind::BaselineWander => spec.f = Some(Frequency::Uniform { lo: 0.05, hi: 0.5 }),
        }
        spec
    }

    /// All six sources at `snr_db`, each applied with probability 0.5.
    pub fn default_set(snr_db: f64) -> Vec<Self> {
        NoiseKind::ALL
            .iter()
            .map(|&k| Self::with_defaults(k, snr_db).with_probability(0.5))
            .collect()
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !self.snr_db.is_finite() {
            return Err(AugmentError::InvalidSpec(format!(
                "snr_db must be finite, got {}",
                self.snr_db
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(AugmentError::InvalidSpec(format!(
                "probability {} outside [0, 1]",
                self.probability
            )));
        }
        match self.f {
            Some(Frequency::Fixed(f)) if !(f > 0.0 && f.is_finite()) => {
                return Err(AugmentError::InvalidSpec(format!("f must be > 0, got {f}")))
            }
            Some(Frequency::Uniform { lo, hi }) if !(lo > 0.0 && hi >= lo && hi.is_finite()) => {
                return Err(AugmentError::InvalidSpec(format!(
                    "bad frequency range [{lo}, {hi}]"
                )))
            }
            _ => {}
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(AugmentError::InvalidSpec(format!(
                    "p must be in (0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of one realization after frequency sampling and jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedParams {
    pub snr_db: f64,
    pub f: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub samples: Vec<f64>,
    pub achieved_power: f64,
    pub params: ResolvedParams,
}

/// Mean of squared samples.
pub fn signal_power(x: &[f64]) -> Result<f64, AugmentError> {
    if x.is_empty() {
        return Err(AugmentError::EmptyWindow);
    }
    Ok(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

/// `Ps / 10^(SNR/10)`.
pub fn noise_power(ps: f64, snr_db: f64) -> f64 {
    ps / 10f64.powf(snr_db / 10.0)
}

/// `value + U(-SNR/10, +SNR/10)`.
pub fn jitter_param<R: Rng + ?Sized>(value: f64, snr_db: f64, rng: &mut R) -> f64 {
    let half = snr_db.abs() / 10.0;
    if half == 0.0 {
        return value;
    }
    value + rng.random_range(-half..=half)
}

/// Draws the per-window parameters of `spec`. Jittered frequencies are
/// folded to positive values (a cosine is even; spike rates must be > 0).
pub fn resolve_params<R: Rng + ?Sized>(
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<ResolvedParams, AugmentError> {
    spec.validate()?;
    let f = match spec.f {
        Some(freq) if spec.kind.needs_frequency() => Some(freq.sample(rng)),
        None if spec.kind.needs_frequency() => {
            return Err(AugmentError::MissingParameter {
                kind: spec.kind,
                param: "frequency f",
            })
        }
        _ => None,
    };
    let p = match (spec.kind, spec.p) {
        (NoiseKind::AmplifierSaturation, None) => {
            return Err(AugmentError::MissingParameter {
                kind: spec.kind,
                param: "saturation fraction p",
            })
        }
        (NoiseKind::AmplifierSaturation, p) => p,
        _ => None,
    };
    if !spec.jitter {
        return Ok(ResolvedParams {
            snr_db: spec.snr_db,
            f,
            p,
        });
    }
    let snr_db = jitter_param(spec.snr_db, spec.snr_db, rng);
    let f = f.map(|f| jitter_param(f, spec.snr_db, rng).abs().max(MIN_FREQUENCY));
    Ok(ResolvedParams { snr_db, f, p })
}

const MIN_FREQUENCY: f64 = 1e-3;

/// Generates one noise realization for `window`.
///
/// `qrs_onsets` is required for pacemaker spikes.
pub fn generate_noise<R: Rng + ?Sized>(
    spec: &AugmentSpec,
    window: &[f64],
    fs: f64,
    qrs_onsets: Option<&[usize]>,
    rng: &mut R,
) -> Result<NoiseRealization, AugmentError> {
    let params = resolve_params(spec, rng)?;
    let samples = realize(spec, &params, window, fs, qrs_onsets, rng)?;
    let achieved_power = signal_power(&samples)?;
    Ok(NoiseRealization {
        samples,
        achieved_power,
        params,
    })
}

fn realize<R: Rng + ?Sized>(
    spec: &AugmentSpec,
    params: &ResolvedParams,
    x: &[f64],
    fs: f64,
    qrs_onsets: Option<&[usize]>,
    rng: &mut R,
) -> Result<Vec<f64>, AugmentError> {
    let ps = signal_power(x)?;
    if ps < 1e-12 {
        warn!("augmenting a flat window (Ps = {ps:e}); noise will be negligible");
    }
    let pn = noise_power(ps, params.snr_db);
    let n = x.len();
    let mut out = vec![0.0; n];
    match spec.kind {
        NoiseKind::Awgn => {
            let normal = Normal::new(0.0, pn.sqrt())
                .map_err(|e| AugmentError::InvalidSpec(e.to_string()))?;
            out.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        NoiseKind::RandomSpikes => {
            let f = params.f.expect("resolved");
            let amplitude = (pn / f).sqrt();
            let kernel = jittered_kernel(rng);
            let period = ((fs / f).round() as usize).max(1);
            let phase = rng.random_range(0..period);
            let mut at = phase;
            while at < n {
                place_spike(&mut out, at, &kernel, amplitude);
                at += period;
            }
        }
        NoiseKind::AmplifierSaturation => {
            let max_abs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let sv = params.p.expect("resolved") * max_abs;
            for (o, &v) in out.iter_mut().zip(x) {
                if v >= sv {
                    *o = sv - v;
                } else if v <= -sv {
                    *o = -sv - v;
                }
            }
        }
        NoiseKind::PacemakerSpikes => {
            let onsets = qrs_onsets.ok_or(AugmentError::MissingParameter {
                kind: NoiseKind::PacemakerSpikes,
                param: "QRS onsets",
            })?;
            let amplitude = (pn / params.f.expect("resolved")).sqrt();
            match spec.spike_shape {
                SpikeShape::Kernel => {
                    let kernel = jittered_kernel(rng);
                    for &at in onsets.iter().filter(|&&i| i < n) {
                        place_spike(&mut out, at, &kernel, amplitude);
                    }
                }
                SpikeShape::Impulse => {
                    for &at in onsets.iter().filter(|&&i| i < n) {
                        out[at] += amplitude;
                    }
                }
            }
        }
        NoiseKind::Powerline | NoiseKind::BaselineWander => {
            let f = params.f.expect("resolved");
            let amplitude = (2.0 * pn).sqrt();
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU * f / fs;
            for (i, o) in out.iter_mut().enumerate() {
                *o = amplitude * (w * i as f64 + phase).cos();
            }
        }
    }
    Ok(out)
}

fn jittered_kernel<R: Rng + ?Sized>(rng: &mut R) -> [f64; 5] {
    let mut k = SPIKE_KERNEL;
    for tap in &mut k {
        *tap += rng.random_range(-SPIKE_TAP_JITTER..=SPIKE_TAP_JITTER);
    }
    k
}

fn place_spike(out: &mut [f64], at: usize, kernel: &[f64; 5], amplitude: f64) {
    let half = kernel.len() / 2;
    for (t, &k) in kernel.iter().enumerate() {
        if let Some(i) = (at + t).checked_sub(half) {
            if let Some(o) = out.get_mut(i) {
                *o += amplitude * k;
            }
        }
    }
}

/// Adds independently generated realizations of every applicable spec to
/// the window. Each spec draws its application coin even when it is not
/// applied, so the random stream does not depend on earlier outcomes.
pub fn augment_window<R: Rng + ?Sized>(
    window: &[f64],
    specs: &[AugmentSpec],
    fs: f64,
    qrs_onsets: Option<&[usize]>,
    rng: &mut R,
) -> Result<Vec<f64>, AugmentError> {
    let mut out = window.to_vec();
    for spec in specs {
        let coin: f64 = rng.random();
        if coin >= spec.probability {
            continue;
        }
        if spec.kind == NoiseKind::PacemakerSpikes && qrs_onsets.is_none() {
            return Err(AugmentError::MissingParameter {
                kind: spec.kind,
                param: "QRS onsets",
            });
        }
        let noise = generate_noise(spec, window, fs, qrs_onsets, rng)?;
        for (o, n) in out.iter_mut().zip(&noise.samples) {
            *o += n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn unit_power_sine(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 2f64.sqrt() * (i as f64 * 0.0123).sin())
            .collect()
    }

    #[test]
    fn power_examples() {
        assert_eq!(signal_power(&[2.0; 7]).unwrap(), 4.0);
        assert_eq!(signal_power(&[0.0; 3]).unwrap(), 0.0);
        assert_eq!(signal_power(&[3.0, -3.0]).unwrap(), 9.0);
        assert_eq!(signal_power(&[]), Err(AugmentError::EmptyWindow));
        assert!((noise_power(1.0, 20.0) - 0.01).abs() < 1e-15);
        assert_eq!(noise_power(1.0, 0.0), 1.0);
        assert!((noise_power(4.0, 10.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn jitter_bounds_and_disabled() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let v = jitter_param(50.0, 20.0, &mut r);
            assert!((48.0..=52.0).contains(&v));
        }
        let spec = AugmentSpec::new(NoiseKind::Powerline, 20.0).with_frequency(50.0);
        let p = resolve_params(&spec, &mut r).unwrap();
        assert_eq!((p.snr_db, p.f), (20.0, Some(50.0)));
    }

    #[test]
    fn powerline_amplitude_and_power() {
        let x = vec![1.0; 250 * 40];
        let spec = AugmentSpec::new(NoiseKind::Powerline, 20.0).with_frequency(50.0);
        let noise = generate_noise(&spec, &x, 250.0, None, &mut rng(3)).unwrap();
        let peak = noise.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 0.02f64.sqrt() + 1e-12);
        assert!(
            (noise.achieved_power - 0.01).abs() < 1e-4,
            "{}",
            noise.achieved_power
        );
    }

    #[test]
    fn saturation_clips_at_sv() {
        let x = [0.0, 0.9, -1.0, 0.5, 0.8];
        let spec = AugmentSpec::new(NoiseKind::AmplifierSaturation, 10.0).with_saturation(0.8);
        let noise = generate_noise(&spec, &x, 250.0, None, &mut rng(0)).unwrap();
        assert!((noise.samples[1] + 0.1).abs() < 1e-12);
        assert!((x[1] + noise.samples[1] - 0.8).abs() < 1e-12);
        assert!((x[2] + noise.samples[2] + 0.8).abs() < 1e-12);
        assert_eq!(noise.samples[0], 0.0);
        assert_eq!(noise.samples[3], 0.0);
    }

    #[test]
    fn pacemaker_spike_support_and_height() {
        let x = vec![1.0; 300];
        let spec = AugmentSpec::new(NoiseKind::PacemakerSpikes, 10.0).with_frequency(1.0);
        let noise = generate_noise(&spec, &x, 250.0, Some(&[100]), &mut rng(9)).unwrap();
        for (i, v) in noise.samples.iter().enumerate() {
            if !(98..=102).contains(&i) {
                assert_eq!(*v, 0.0, "sample {i}");
            }
        }
        let scale = 0.1f64.sqrt();
        let centre = noise.samples[100] / scale;
        assert!((1.25..=1.75).contains(&centre), "{centre}");

        let impulse = AugmentSpec {
            spike_shape: SpikeShape::Impulse,
            ..spec
        };
        let noise = generate_noise(&impulse, &x, 250.0, Some(&[100]), &mut rng(9)).unwrap();
        assert!((noise.samples[100] - scale).abs() < 1e-12);
        assert_eq!(noise.samples.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn missing_parameters_are_errors() {
        let x = [1.0; 10];
        let rs = AugmentSpec::new(NoiseKind::RandomSpikes, 10.0);
        assert!(matches!(
            generate_noise(&rs, &x, 250.0, None, &mut rng(0)),
            Err(AugmentError::MissingParameter { .. })
        ));
        let ps = AugmentSpec::new(NoiseKind::PacemakerSpikes, 10.0).with_frequency(1.0);
        assert!(matches!(
            generate_noise(&ps, &x, 250.0, None, &mut rng(0)),
            Err(AugmentError::MissingParameter { .. })
        ));
        let sat = AugmentSpec::new(NoiseKind::AmplifierSaturation, 10.0);
        assert!(matches!(
            generate_noise(&sat, &x, 250.0, None, &mut rng(0)),
            Err(AugmentError::MissingParameter { .. })
        ));
    }

    #[test]
    fn random_spikes_are_periodic_and_local() {
        let x = vec![1.0; 1000];
        let spec = AugmentSpec::new(NoiseKind::RandomSpikes, 10.0).with_frequency(2.5);
        let noise = generate_noise(&spec, &x, 250.0, None, &mut rng(4)).unwrap();
        // one kernel per realization, repeated every 100 samples
        for i in 0..900 {
            assert!(
                (noise.samples[i] - noise.samples[i + 100]).abs() < 1e-12,
                "sample {i}"
            );
        }
        let nonzero = noise.samples[..100].iter().filter(|v| **v != 0.0).count();
        assert!((1..=5).contains(&nonzero), "{nonzero}");
    }

    #[test]
    fn awgn_variance_and_power_additivity() {
        let x = unit_power_sine(100_000);
        let spec = AugmentSpec::new(NoiseKind::Awgn, 10.0);
        let noise = generate_noise(&spec, &x, 250.0, None, &mut rng(11)).unwrap();
        let mean = noise.samples.iter().sum::<f64>() / 1e5;
        let var = noise
            .samples
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (1e5 - 1.0);
        assert!((var / 0.1 - 1.0).abs() < 0.05, "{var}");

        let out = augment_window(&x, &[spec], 250.0, None, &mut rng(12)).unwrap();
        let p = signal_power(&out).unwrap();
        assert!((p / 1.1 - 1.0).abs() < 0.05, "{p}");
    }

    #[test]
    fn empty_specs_and_determinism() {
        let x = unit_power_sine(2000);
        assert_eq!(
            augment_window(&x, &[], 250.0, None, &mut rng(0)).unwrap(),
            x
        );
        let specs = AugmentSpec::default_set(15.0);
        let onsets = [10, 400, 900];
        let a = augment_window(&x, &specs, 250.0, Some(&onsets), &mut rng(5)).unwrap();
        let b = augment_window(&x, &specs, 250.0, Some(&onsets), &mut rng(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, x);
    }

    #[test]
    fn spec_json_forms() {
        let spec: AugmentSpec =
            serde_json::from_str(r#"{"kind":"BW","snr_db":20,"f":{"lo":0.05,"hi":0.5}}"#).unwrap();
        assert_eq!(spec.kind, NoiseKind::BaselineWander);
        assert!(spec.jitter);
        let spec: AugmentSpec =
            serde_json::from_str(r#"{"kind":"PN","snr_db":20,"f":60}"#).unwrap();
        assert_eq!(spec.f, Some(Frequency::Fixed(60.0)));
        assert!(serde_json::from_str::<AugmentSpec>(r#"{"kind":"XX","snr_db":1}"#).is_err());
    }
}
