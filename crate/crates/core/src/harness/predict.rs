use std::ops::Range;

use ndarray::{s, Array2, Array3};

use super::{EvaluationConfig, HarnessError, LeadMode};
use crate::mask::{decode_mask, encode_mask, intervals_to_fiducials, DelineationMask, MaskKind};
use crate::metrics::{evaluate_record, labeled_span, mask_dice, ConditionMap, RecordMetrics};
use crate::unet::UNet;
use crate::wfdb::interchange::LabeledRecord;
use crate::wfdb::{FiducialSet, LabelQuality, Record, Wave};

const PREDICT_BATCH: usize = 8;

/// Window starts covering `[0, n)`: back-to-back windows plus, when `n` is
/// not a multiple of `w`, one final window ending at `n`. Requires `n >= w`.
pub fn tile_starts(n: usize, w: usize) -> Vec<usize> {
    assert!(
        w > 0 && n >= w,
        "cannot tile {n} samples with {w}-sample windows"
    );
    let mut starts: Vec<usize> = (0..n / w).map(|i| i * w).collect();
    if n % w != 0 {
        starts.push(n - w);
    }
    starts
}

/// Runs `model` over `input` (`[n, C]`) window by window and stitches the
/// outputs into `[n, 3]`, averaging where the last window overlaps.
fn predict_channels(
    model: &UNet<f32>,
    input: &Array2<f32>,
    w: usize,
) -> Result<Array2<f32>, HarnessError> {
    let (n, ch) = input.dim();
    let (padded, n_eff) = if n < w {
        log::warn!("record of {n} samples is shorter than one {w}-sample window; zero-padding");
        let mut p = Array2::zeros((w, ch));
        p.slice_mut(s![..n, ..]).assign(input);
        (p, w)
    } else {
        (input.clone(), n)
    };
    let starts = tile_starts(n_eff, w);
    let mut sum = Array2::<f32>::zeros((n_eff, 3));
    let mut count = vec![0u32; n_eff];
    for chunk in starts.chunks(PREDICT_BATCH) {
        let mut x = Array3::zeros((chunk.len(), w, ch));
        for (i, &st) in chunk.iter().enumerate() {
            x.slice_mut(s![i, .., ..])
                .assign(&padded.slice(s![st..st + w, ..]));
        }
        let y = model.forward(x.view())?;
        for (i, &st) in chunk.iter().enumerate() {
            let mut dst = sum.slice_mut(s![st..st + w, ..]);
            dst += &y.slice(s![i, .., ..]);
            count[st..st + w].iter_mut().for_each(|c| *c += 1);
        }
    }
    for (mut row, &c) in sum.rows_mut().into_iter().zip(&count) {
        row.mapv_inplace(|v| v / c as f32);
    }
    Ok(sum.slice(s![..n, ..]).to_owned())
}

/// Full-length prediction masks: one per lead in single-lead mode, one shared
/// mask in multi-lead mode.
pub fn predict_record(
    model: &UNet<f32>,
    record: &Record,
    lead_mode: LeadMode,
    window_len: usize,
) -> Result<Vec<DelineationMask>, HarnessError> {
    let fs = record.fs();
    let signal = record.signal.mapv(|v| v as f32);
    let inputs: Vec<Array2<f32>> = match lead_mode {
        LeadMode::Single => (0..record.n_leads())
            .map(|l| signal.slice(s![.., l..=l]).to_owned())
            .collect(),
        LeadMode::Multi => vec![signal],
    };
    inputs
        .iter()
        .map(|x| {
            let p = predict_channels(model, x, window_len)?;
            Ok(DelineationMask::new(p, fs, MaskKind::Prediction)?)
        })
        .collect()
}

/// Thresholds masks and turns runs into fiducials. Peaks are placed at the
/// largest absolute deflection of the corresponding lead (lead 0 for a
/// shared mask).
pub fn masks_to_fiducials(
    masks: &[DelineationMask],
    record: &Record,
    eval: &EvaluationConfig,
) -> Vec<FiducialSet> {
    let min_run = ((eval.min_run_seconds * record.fs()).round() as usize).max(1);
    let shared = masks.len() == 1 && record.n_leads() > 1;
    masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let intervals = decode_mask(m, eval.threshold, min_run);
            let lead_signal = record.lead(i.min(record.n_leads() - 1));
            let lead = (!shared).then_some(i);
            intervals_to_fiducials(&intervals, Some(&lead_signal), LabelQuality::Low, lead)
        })
        .collect()
}

/// Drops predicted waves that do not overlap `span`, so that detections
/// outside the annotated stretch are not counted as false positives.
pub fn restrict_to_span(set: &FiducialSet, span: &Range<usize>) -> FiducialSet {
    let mut out = FiducialSet::new(set.quality, set.lead);
    for wave in Wave::ALL {
        *out.wave_mut(wave) = set
            .wave(wave)
            .iter()
            .filter(|f| match f.interval() {
                Some((on, off)) => on < span.end && off >= span.start,
                None => f.points().any(|x| span.contains(&x)),
            })
            .copied()
            .collect();
    }
    out
}

/// Everything produced for one test record.
#[derive(Debug, Clone)]
pub struct RecordPrediction {
    pub masks: Vec<DelineationMask>,
    pub fiducials: Vec<FiducialSet>,
    pub metrics: RecordMetrics,
}

/// Scores predictions against the record's high-quality labels inside their
/// labeled span. Dice is averaged over prediction masks (leads).
pub fn evaluate_prediction(
    rec: &LabeledRecord,
    masks: Vec<DelineationMask>,
    eval: &EvaluationConfig,
    conditions: &ConditionMap,
) -> Result<RecordPrediction, HarnessError> {
    let truth = rec
        .high_quality()
        .ok_or_else(|| HarnessError::Data(format!("{} has no high-quality labels", rec.id())))?;
    let fiducials = masks_to_fiducials(&masks, &rec.record, eval);
    let span = labeled_span(truth).unwrap_or(0..0);
    let restricted: Vec<FiducialSet> = fiducials
        .iter()
        .map(|f| restrict_to_span(f, &span))
        .collect();
    let condition = rec
        .condition
        .clone()
        .or_else(|| conditions.condition_for(rec.id()));
    let mut metrics = evaluate_record(
        rec.id(),
        truth,
        &restricted,
        rec.record.fs(),
        condition,
        eval.error_mode,
    )?;
    // complete waves only; partial labels cannot be drawn as intervals
    let mut complete = FiducialSet::new(truth.quality, truth.lead);
    for wave in Wave::ALL {
        *complete.wave_mut(wave) = truth
            .wave(wave)
            .iter()
            .filter(|f| f.interval().is_some())
            .copied()
            .collect();
    }
    let truth_mask = encode_mask(&complete, rec.record.n_samples(), rec.record.fs())?;
    let mut dice = [0.0; 3];
    for m in &masks {
        let d = mask_dice(m, &truth_mask, eval.threshold, Some(span.clone()))?;
        for (acc, v) in dice.iter_mut().zip(d) {
            *acc += v / masks.len() as f64;
        }
    }
    for (w, d) in metrics.waves.iter_mut().zip(dice) {
        w.dice = Some(d);
    }
    Ok(RecordPrediction {
        masks,
        fiducials,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_record, SynthConfig};
    use crate::unet::{ModelConfig, UNet};
    use crate::wfdb::WaveFiducial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(in_channels: usize) -> UNet<f32> {
        let cfg = ModelConfig {
            levels: 4,
            blocks_per_level: 2,
            base_channels: 2,
            in_channels,
            ..ModelConfig::default()
        };
        UNet::new(cfg, 1).unwrap()
    }

    fn record(n: usize) -> LabeledRecord {
        let cfg = SynthConfig {
            n_samples: n,
            ..SynthConfig::default()
        };
        synth_record("r", &cfg, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn tiling_rule() {
        assert_eq!(tile_starts(1024, 256), vec![0, 256, 512, 768]);
        assert_eq!(tile_starts(1152, 256), vec![0, 256, 512, 768, 896]);
        assert_eq!(tile_starts(256, 256), vec![0]);
    }

    #[test]
    fn stitched_length_matches_record() {
        let m = model(1);
        for n in [256, 300, 1024, 1152, 1000] {
            let rec = record(n);
            let masks = predict_record(&m, &rec.record, LeadMode::Single, 256).unwrap();
            assert_eq!(masks.len(), 2);
            assert!(masks.iter().all(|m| m.n_samples() == n));
        }
        let short = record(100);
        let masks = predict_record(&m, &short.record, LeadMode::Single, 256).unwrap();
        assert_eq!(masks[0].n_samples(), 100);
        let multi = predict_record(&model(2), &record(600).record, LeadMode::Multi, 256).unwrap();
        assert_eq!(multi.len(), 1);
    }

    #[test]
    fn overlap_is_averaged() {
        let m = model(1);
        let rec = record(1152);
        let full = predict_record(&m, &rec.record, LeadMode::Single, 256).unwrap();
        let x = rec.record.signal.mapv(|v| v as f32);
        // the seam region [896, 1024) averages windows starting at 768 and 896
        let a = m
            .forward(x.slice(s![768..1024, 0..1]).insert_axis(ndarray::Axis(0)))
            .unwrap();
        let b = m
            .forward(x.slice(s![896..1152, 0..1]).insert_axis(ndarray::Axis(0)))
            .unwrap();
        let want = (a[[0, 200, 1]] + b[[0, 72, 1]]) / 2.0;
        assert!((full[0].channels()[[968, 1]] - want).abs() < 1e-6);
        assert_eq!(full[0].channels()[[100, 1]], {
            let c = m
                .forward(x.slice(s![0..256, 0..1]).insert_axis(ndarray::Axis(0)))
                .unwrap();
            c[[0, 100, 1]]
        });
    }

    #[test]
    fn perfect_masks_score_perfectly() {
        let rec = record(2048);
        let truth = rec.high_quality().unwrap();
        let mask = encode_mask(truth, 2048, 250.0).unwrap();
        let pred =
            DelineationMask::new(mask.channels().clone(), 250.0, MaskKind::Prediction).unwrap();
        let eval = EvaluationConfig::default();
        let out = evaluate_prediction(&rec, vec![pred], &eval, &ConditionMap::default()).unwrap();
        for w in &out.metrics.waves {
            assert_eq!(w.counts.fp, 0);
            assert_eq!(w.counts.fn_, 0);
            assert_eq!(w.dice, Some(1.0));
            assert!(w
                .errors
                .onset_ms
                .iter()
                .chain(&w.errors.offset_ms)
                .all(|&e| e == 0.0));
        }
        assert_eq!(out.metrics.condition.as_deref(), Some("Synthetic"));
    }

    #[test]
    fn span_restriction() {
        let mut set = FiducialSet::new(LabelQuality::Low, None);
        set.wave_mut(Wave::Qrs).extend([
            WaveFiducial::complete(10, 15, 20),
            WaveFiducial::complete(95, 100, 105),
            WaveFiducial::complete(300, 305, 310),
        ]);
        let r = restrict_to_span(&set, &(100..200));
        assert_eq!(r.wave(Wave::Qrs).len(), 1);
    }
}
