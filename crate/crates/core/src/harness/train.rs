use std::collections::BTreeSet;

use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_validation, ExperimentConfig, FoldSplit, HarnessError, Window};
use crate::augment::augment_window;
use crate::unet::{jaccard_loss, TrainState, UNet, JACCARD_EPS};
use crate::wfdb::interchange::LabeledRecord;
use crate::wfdb::LabelQuality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Train,
}

/// One line of a fold's training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: Phase,
    pub epoch: usize,
    /// Optimizer steps taken so far (cumulative over phases).
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: UNet<f32>,
    pub log: Vec<LogRow>,
    pub steps: u64,
    pub train_records: Vec<String>,
    pub validation_records: Vec<String>,
    pub test_records: Vec<String>,
    /// Loss of the very first batch, a cheap determinism fingerprint.
    pub first_batch_loss: Option<f64>,
}

/// A per-purpose seed derived from the run seed and fold index.
pub fn derive_seed(seed: u64, fold: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((fold as u64) << 8 | purpose);
    rng.random()
}

const SEED_DATA: u64 = 1;
const SEED_DROPOUT: u64 = 2;
const SEED_VALIDATION: u64 = 3;

fn windows_for(
    cfg: &ExperimentConfig,
    records: &[&LabeledRecord],
    quality: LabelQuality,
    stride: usize,
) -> Result<Vec<Window>, HarnessError> {
    let t = &cfg.training;
    let mut out = Vec::new();
    for rec in records {
        if rec.record.n_samples() < t.window_len {
            log::warn!(
                "{}: {} samples is shorter than one window, skipped",
                rec.id(),
                rec.record.n_samples()
            );
            continue;
        }
        out.extend(super::make_windows(
            rec,
            quality,
            cfg.lead_mode,
            t.window_len,
            stride,
        )?);
    }
    Ok(out)
}

/// Stacks windows into `[B, L, C]` inputs and `[B, L, 3]` labels, optionally
/// augmenting each channel independently.
fn batch(
    windows: &[&Window],
    cfg: &ExperimentConfig,
    fs: f64,
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Array3<f32>, Array3<f32>), HarnessError> {
    let len = windows[0].len();
    let ch = windows[0].signal.ncols();
    let mut x = Array3::zeros((windows.len(), len, ch));
    let mut y = Array3::zeros((windows.len(), len, 3));
    for (i, w) in windows.iter().enumerate() {
        y.slice_mut(s![i, .., ..]).assign(&w.mask);
        for c in 0..ch {
            let col = w.signal.column(c);
            if augment {
                let src: Vec<f64> = col.iter().map(|&v| f64::from(v)).collect();
                let noisy = augment_window(&src, &cfg.augment, fs, Some(&w.qrs_onsets), rng)?;
                for (dst, v) in x.slice_mut(s![i, .., c]).iter_mut().zip(noisy) {
                    *dst = v as f32;
                }
            } else {
                x.slice_mut(s![i, .., c]).assign(&col);
            }
        }
    }
    Ok((x, y))
}

fn validation_loss(
    model: &UNet<f32>,
    windows: &[Window],
    batch_size: usize,
) -> Result<Option<f64>, HarnessError> {
    if windows.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(batch_size) {
        let len = chunk[0].len();
        let ch = chunk[0].signal.ncols();
        let mut x = Array3::zeros((chunk.len(), len, ch));
        let mut y = Array3::zeros((chunk.len(), len, 3));
        for (i, w) in chunk.iter().enumerate() {
            x.slice_mut(s![i, .., ..]).assign(&w.signal);
            y.slice_mut(s![i, .., ..]).assign(&w.mask);
        }
        let p = model.forward(x.view())?;
        total += jaccard_loss(p.view(), y.view(), JACCARD_EPS)? * chunk.len() as f64;
    }
    Ok(Some(total / windows.len() as f64))
}

struct PhaseRun<'a> {
    phase: Phase,
    windows: &'a [Window],
    val: &'a [Window],
    epochs: usize,
    lr: f64,
    augment: bool,
}

/// Trains one fold: optional low-quality pre-training, then training on
/// high-quality windows. Test-fold records never contribute a window.
pub fn train_fold(
    cfg: &ExperimentConfig,
    dataset: &[LabeledRecord],
    split: &FoldSplit,
    fold: usize,
) -> Result<FoldOutcome, HarnessError> {
    cfg.validate()?;
    if fold >= split.k {
        return Err(HarnessError::Config(format!(
            "fold {fold} out of range for k = {}",
            split.k
        )));
    }
    let train_all = split.train_ids(fold);
    let (train_ids, val_ids) = split_validation(
        &train_all,
        cfg.training.validation_fraction,
        derive_seed(cfg.seed, fold, SEED_VALIDATION),
    );
    let test_ids = split.test_ids(fold);
    let pick = |ids: &[&str]| -> Vec<&LabeledRecord> {
        let ids: BTreeSet<&str> = ids.iter().copied().collect();
        dataset.iter().filter(|r| ids.contains(r.id())).collect()
    };
    let train_recs = pick(&train_ids);
    let val_recs = pick(&val_ids);
    if train_recs.is_empty() {
        return Err(HarnessError::Data(format!(
            "fold {fold} has no training records"
        )));
    }
    let fs = train_recs[0].record.fs();
    if let Some(r) = train_recs.iter().find(|r| r.record.fs() != fs) {
        return Err(HarnessError::Data(format!(
            "{} is sampled at {} Hz, expected {fs} Hz",
            r.id(),
            r.record.fs()
        )));
    }

    let t = &cfg.training;
    let pre_windows;
    let pre_val;
    if cfg.pretrain_low_quality {
        if !cfg.augment.is_empty() {
            log::warn!("augmentation is disabled when pre-training on low-quality labels");
        }
        pre_windows = windows_for(cfg, &train_recs, LabelQuality::Low, t.stride)?;
        pre_val = windows_for(cfg, &val_recs, LabelQuality::Low, t.window_len)?;
    } else {
        pre_windows = Vec::new();
        pre_val = Vec::new();
    }
    let hq_windows = windows_for(cfg, &train_recs, LabelQuality::High, t.stride)?;
    let hq_val = windows_for(cfg, &val_recs, LabelQuality::High, t.window_len)?;
    if hq_windows.is_empty() {
        return Err(HarnessError::Data(format!(
            "fold {fold}: no fully delineated high-quality training windows"
        )));
    }
    let mut runs = Vec::new();
    if cfg.pretrain_low_quality {
        runs.push(PhaseRun {
            phase: Phase::Pretrain,
            windows: &pre_windows,
            val: &pre_val,
            epochs: t.pretrain_epochs,
            lr: t.learning_rate,
            augment: false,
        });
    }
    runs.push(PhaseRun {
        phase: Phase::Train,
        windows: &hq_windows,
        val: &hq_val,
        epochs: t.epochs,
        lr: if cfg.pretrain_low_quality {
            t.finetune_learning_rate.unwrap_or(t.learning_rate)
        } else {
            t.learning_rate
        },
        augment: !cfg.pretrain_low_quality && !cfg.augment.is_empty(),
    });

    let model = UNet::new(cfg.model.clone(), cfg.seed)?;
    let mut state = TrainState::new(model, t.adam, derive_seed(cfg.seed, fold, SEED_DROPOUT));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, fold, SEED_DATA));
    let mut log = Vec::new();
    let mut first_batch_loss = None;

    for run in runs {
        if run.windows.is_empty() {
            log::warn!("fold {fold}: no windows for {:?}, phase skipped", run.phase);
            continue;
        }
        log::info!(
            "fold {fold}: {:?} on {} windows for {} epochs",
            run.phase,
            run.windows.len(),
            run.epochs
        );
        let mut phase_steps = 0usize;
        let mut order: Vec<usize> = (0..run.windows.len()).collect();
        'epochs: for epoch in 0..run.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut n = 0usize;
            for idx in order.chunks(t.batch_size) {
                if t.max_steps.is_some_and(|m| phase_steps >= m) {
                    break;
                }
                let ws: Vec<&Window> = idx.iter().map(|&i| &run.windows[i]).collect();
                let (x, y) = batch(&ws, cfg, fs, run.augment, &mut rng)?;
                let loss = state.train_step(x.view(), y.view(), run.lr)?;
                first_batch_loss.get_or_insert(loss);
                sum += loss * ws.len() as f64;
                n += ws.len();
                phase_steps += 1;
            }
            if n == 0 {
                break 'epochs;
            }
            let row = LogRow {
                phase: run.phase,
                epoch,
                step: state.step(),
                train_loss: sum / n as f64,
                val_loss: validation_loss(&state.model, run.val, t.batch_size)?,
            };
            log::info!(
                "fold {fold} {:?} epoch {epoch}: loss {:.4}{}",
                row.phase,
                row.train_loss,
                row.val_loss
                    .map_or(String::new(), |v| format!(", val {v:.4}"))
            );
            log.push(row);
        }
    }

    let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    Ok(FoldOutcome {
        fold,
        steps: state.step(),
        model: state.model,
        log,
        train_records: own(&train_ids),
        validation_records: own(&val_ids),
        test_records: own(&test_ids),
        first_batch_loss,
    })
}
