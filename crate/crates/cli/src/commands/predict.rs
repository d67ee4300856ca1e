use std::path::PathBuf;

use anyhow::Result;
use ecgdel_core::harness::{masks_to_fiducials, predict_record, EvaluationConfig, LeadMode};
use ecgdel_core::mask::MaskDocument;
use ecgdel_core::wfdb::interchange::{LabelDocument, LabelHeader};
use ecgdel_core::UNet;

use crate::error::usage;
use crate::io::{load_record, write_json, write_text};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Interchange JSON or WFDB `.hea` file.
    #[arg(long)]
    record: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Inference window length; must be a multiple of the model's length divisor.
    #[arg(long, default_value_t = 2048)]
    window_len: usize,
    #[arg(long, default_value_t = ecgdel_core::mask::DEFAULT_THRESHOLD)]
    threshold: f32,
    /// Shortest kept run, in seconds.
    #[arg(long, default_value_t = ecgdel_core::mask::DEFAULT_MIN_RUN_SECONDS)]
    min_run: f64,
}

pub fn run(args: Args) -> Result<()> {
    let (model, step) = UNet::<f32>::load(&args.checkpoint)?;
    let divisor = model.config().length_divisor();
    if args.window_len == 0 || args.window_len % divisor != 0 {
        return Err(usage(format!(
            "--window-len {} must be a positive multiple of {divisor}",
            args.window_len
        )));
    }
    let rec = load_record(&args.record)?;
    let in_ch = model.config().in_channels;
    let mode = if in_ch == 1 {
        LeadMode::Single
    } else if in_ch == rec.record.n_leads() {
        LeadMode::Multi
    } else {
        return Err(usage(format!(
            "checkpoint expects {in_ch} leads, record {} has {}",
            rec.id(),
            rec.record.n_leads()
        )));
    };
    log::info!("checkpoint at step {step}, {mode:?}-lead inference");
    let masks = predict_record(&model, &rec.record, mode, args.window_len)?;
    let eval = EvaluationConfig {
        threshold: args.threshold,
        min_run_seconds: args.min_run,
        ..EvaluationConfig::default()
    };
    let fiducials = masks_to_fiducials(&masks, &rec.record, &eval);
    let n_beats: usize = fiducials.iter().map(|f| f.wave(ecgdel_core::Wave::Qrs).len()).sum();
    let doc = LabelDocument::new(
        LabelHeader {
            record_id: rec.id().to_string(),
            fs: rec.record.fs(),
            n_samples: rec.record.n_samples(),
        },
        fiducials,
        rec.condition.clone(),
    );
    let id = rec.id();
    write_text(&args.out.join(format!("{id}.labels.json")), &doc.to_json())?;
    let mask_docs: Vec<MaskDocument> = masks
        .iter()
        .map(|m| MaskDocument::from_mask(m, args.threshold))
        .collect();
    write_json(&args.out.join(format!("{id}.mask.json")), &mask_docs)?;
    println!(
        "{id}: {} mask(s), {n_beats} QRS complexes -> {}",
        masks.len(),
        args.out.display()
    );
    Ok(())
}
