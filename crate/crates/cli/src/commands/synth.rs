use std::path::PathBuf;

use anyhow::Result;
use ecgdel_core::synth::{synth_record, SynthConfig};
use ecgdel_core::wfdb::interchange::export_interchange;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::usage;
use crate::io::write_text;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    out: PathBuf,
    /// Number of records.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per record.
    #[arg(long, default_value_t = 15_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 250.0)]
    fs: f64,
    /// Leading beats given high-quality labels; 0 labels every beat.
    #[arg(long, default_value_t = 30)]
    labeled_beats: usize,
}

pub fn run(args: Args) -> Result<()> {
    if args.n == 0 || args.n_samples == 0 || !(args.fs > 0.0) {
        return Err(usage("--n, --n-samples and --fs must be positive"));
    }
    let cfg = SynthConfig {
        fs: args.fs,
        n_samples: args.n_samples,
        high_quality_beats: (args.labeled_beats > 0).then_some(args.labeled_beats),
        ..SynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for i in 0..args.n {
        let id = format!("syn{i:03}");
        let rec = synth_record(&id, &cfg, &mut rng);
        write_text(&args.out.join(format!("{id}.json")), &export_interchange(&rec))?;
    }
    println!("wrote {} synthetic records to {}", args.n, args.out.display());
    Ok(())
}
