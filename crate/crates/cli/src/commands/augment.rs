use std::path::PathBuf;

use anyhow::Result;
use ecgdel_core::augment::augment_window;
use ecgdel_core::harness::tile_starts;
use ecgdel_core::{AugmentSpec, Wave};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::usage;
use crate::io::{load_record, read_text, write_json, write_text};
use crate::svg::{SignalPlot, Trace};

#[derive(clap::Args)]
pub struct Args {
    /// Interchange JSON or WFDB `.hea` file.
    #[arg(long)]
    record: PathBuf,
    /// JSON file with one augmentation spec or a list of them.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    window_len: usize,
    #[arg(long, default_value_t = 0)]
    lead: usize,
    /// Maximum number of windows written.
    #[arg(long)]
    max_windows: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Many(Vec<AugmentSpec>),
    One(AugmentSpec),
}

#[derive(Serialize)]
struct AugmentedWindow {
    start: usize,
    clean: Vec<f64>,
    augmented: Vec<f64>,
}

#[derive(Serialize)]
struct AugmentOutput {
    record_id: String,
    lead: usize,
    fs: f64,
    seed: u64,
    specs: Vec<AugmentSpec>,
    windows: Vec<AugmentedWindow>,
}

pub fn run(args: Args) -> Result<()> {
    let text = read_text(&args.spec)?;
    let specs = match serde_json::from_str::<SpecFile>(&text)
        .map_err(|e| usage(format!("{}: {e}", args.spec.display())))?
    {
        SpecFile::Many(v) => v,
        SpecFile::One(s) => vec![s],
    };
    for s in &specs {
        s.validate().map_err(|e| usage(e.to_string()))?;
    }
    let rec = load_record(&args.record)?;
    if args.lead >= rec.record.n_leads() {
        return Err(usage(format!(
            "--lead {} out of range; {} has {} leads",
            args.lead,
            rec.id(),
            rec.record.n_leads()
        )));
    }
    if args.window_len == 0 {
        return Err(usage("--window-len must be positive"));
    }
    let signal = rec.record.lead(args.lead);
    let n = signal.len();
    let w = args.window_len.min(n);
    let labels = rec.high_quality().or_else(|| rec.low_quality(args.lead));
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut windows = Vec::new();
    for start in tile_starts(n, w)
        .into_iter()
        .take(args.max_windows.unwrap_or(usize::MAX))
    {
        let clean = signal[start..start + w].to_vec();
        let onsets: Option<Vec<usize>> = labels.map(|set| {
            set.onsets(Wave::Qrs)
                .into_iter()
                .filter(|&o| o >= start && o < start + w)
                .map(|o| o - start)
                .collect()
        });
        let augmented =
            augment_window(&clean, &specs, rec.record.fs(), onsets.as_deref(), &mut rng)
                .map_err(|e| usage(e.to_string()))?;
        windows.push(AugmentedWindow {
            start,
            clean,
            augmented,
        });
    }
    if let Some(first) = windows.first() {
        let plot = SignalPlot {
            title: format!("{} lead {} (seed {})", rec.id(), args.lead, args.seed),
            fs: rec.record.fs(),
            offset: first.start,
            traces: vec![
                Trace {
                    label: "augmented".into(),
                    values: first.augmented.clone(),
                    color: "#e8574c".into(),
                },
                Trace {
                    label: "clean".into(),
                    values: first.clean.clone(),
                    color: "#222".into(),
                },
            ],
            bands: Vec::new(),
        };
        write_text(&args.out.join("augmented.svg"), &plot.render())?;
    }
    let count = windows.len();
    let out = AugmentOutput {
        record_id: rec.id().to_string(),
        lead: args.lead,
        fs: rec.record.fs(),
        seed: args.seed,
        specs,
        windows,
    };
    write_json(&args.out.join("augmented.json"), &out)?;
    println!("wrote {count} augmented windows to {}", args.out.display());
    Ok(())
}
