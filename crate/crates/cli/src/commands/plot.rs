use std::path::PathBuf;

use anyhow::Result;
use ecgdel_core::mask::MaskDocument;
use ecgdel_core::metrics::MetricsReport;
use ecgdel_core::wfdb::interchange::LabelDocument;
use ecgdel_core::{FiducialSet, Wave};

use crate::error::usage;
use crate::io::{load_record, read_json, read_text, write_text};
use crate::svg::{bar_chart, Band, SignalPlot, Trace, WAVE_COLORS};

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["report", "record"])))]
pub struct Args {
    /// A metrics report: plots F1 and Dice per wave.
    #[arg(long)]
    report: Option<PathBuf>,
    /// A record: plots one lead with its labels shaded.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Label document to shade instead of the record's own reference labels.
    #[arg(long, requires = "record", conflicts_with = "mask")]
    labels: Option<PathBuf>,
    /// Mask file (as written by `predict`) to shade.
    #[arg(long, requires = "record")]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    lead: usize,
    /// Start of the plotted stretch, seconds.
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Length of the plotted stretch, seconds.
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long)]
    out: PathBuf,
}

fn bands_from_set(set: &FiducialSet, lo: usize, hi: usize) -> Vec<Band> {
    Wave::ALL
        .iter()
        .flat_map(|&w| {
            set.wave(w)
                .iter()
                .filter_map(|f| f.interval())
                .filter(move |&(a, b)| b >= lo && a < hi)
                .map(move |(a, b)| Band {
                    start: a.max(lo),
                    end: b.min(hi - 1),
                    color: WAVE_COLORS[w.index()].into(),
                })
        })
        .collect()
}

pub fn run(args: Args) -> Result<()> {
    if let Some(p) = &args.report {
        let report: MetricsReport = read_json(p)?;
        let groups: Vec<(String, Vec<Option<f64>>)> = Wave::ALL
            .iter()
            .filter_map(|&w| report.wave(w).map(|r| (w.name().to_string(), vec![r.f1, r.dice])))
            .collect();
        let title = format!("{} records", report.n_records);
        write_text(&args.out, &bar_chart(&title, &groups, &["F1", "Dice"]))?;
        return Ok(());
    }
    let path = args.record.as_ref().expect("clap enforces a source");
    let rec = load_record(path)?;
    if args.lead >= rec.record.n_leads() {
        return Err(usage(format!("--lead {} out of range", args.lead)));
    }
    if !(args.start >= 0.0 && args.seconds > 0.0) {
        return Err(usage("--start must be >= 0 and --seconds > 0"));
    }
    let fs = rec.record.fs();
    let n = rec.record.n_samples();
    let lo = ((args.start * fs) as usize).min(n - 1);
    let hi = (lo + (args.seconds * fs).ceil() as usize).min(n);
    let signal = rec.record.lead(args.lead)[lo..hi].to_vec();

    let bands = if let Some(p) = &args.mask {
        let docs: Vec<MaskDocument> = read_json(p)?;
        let doc = docs
            .get(args.lead)
            .or(docs.first())
            .ok_or_else(|| usage("mask file is empty"))?;
        Wave::ALL
            .iter()
            .flat_map(|&w| {
                doc.runs
                    .get(w.name())
                    .into_iter()
                    .flatten()
                    .filter(|r| r[1] >= lo && r[0] < hi)
                    .map(move |r| Band {
                        start: r[0].max(lo),
                        end: r[1].min(hi - 1),
                        color: WAVE_COLORS[w.index()].into(),
                    })
            })
            .collect()
    } else if let Some(p) = &args.labels {
        let doc = LabelDocument::from_json(&read_text(p)?)?;
        let sets = doc.fiducial_sets()?;
        let set = sets
            .iter()
            .find(|s| s.lead.is_none_or(|l| l == args.lead))
            .ok_or_else(|| usage("label document has no set for this lead"))?;
        bands_from_set(set, lo, hi)
    } else {
        rec.high_quality()
            .map(|s| bands_from_set(s, lo, hi))
            .unwrap_or_default()
    };
    let plot = SignalPlot {
        title: format!("{} lead {} (P, QRS, T shaded)", rec.id(), args.lead),
        fs,
        offset: lo,
        traces: vec![Trace {
            label: format!("lead {}", args.lead),
            values: signal,
            color: "#222".into(),
        }],
        bands,
    };
    write_text(&args.out, &plot.render())?;
    Ok(())
}
