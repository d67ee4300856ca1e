use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ecgdel_core::harness::restrict_to_span;
use ecgdel_core::mask::encode_mask;
use ecgdel_core::metrics::{
    aggregate_report, compare_reports, evaluate_record, labeled_span, mask_dice, Averaging,
    ConditionMap, ErrorMode, MetricsReport,
};
use ecgdel_core::wfdb::interchange::LabelDocument;
use ecgdel_core::{FiducialSet, LabelQuality, Wave};

use crate::error::{data, usage};
use crate::io::{read_json, read_text, write_json, write_text};

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    CrossLead,
    PerLead,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AveragingArg {
    Micro,
    Macro,
}

#[derive(clap::Args)]
pub struct Args {
    /// Prediction label document, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Reference record/label document, or a directory of them.
    #[arg(long)]
    truth: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the report as `metric,value` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// A previous report to diff against.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cross-lead")]
    error_mode: ModeArg,
    #[arg(long, value_enum, default_value = "micro")]
    averaging: AveragingArg,
}

/// Label documents keyed by record id. Top-level JSON arrays (reports, mask
/// lists) in a directory are skipped.
fn load_docs(path: &Path) -> Result<BTreeMap<String, LabelDocument>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = BTreeMap::new();
    for f in files {
        let text = read_text(&f)?;
        if path.is_dir() && text.trim_start().starts_with('[') {
            continue;
        }
        let doc = LabelDocument::from_json(&text).with_context(|| f.display().to_string())?;
        if out.insert(doc.header.record_id.clone(), doc).is_some() {
            return Err(data(format!("{}: duplicate record id", f.display())));
        }
    }
    if out.is_empty() {
        return Err(data(format!("no label documents in {}", path.display())));
    }
    Ok(out)
}

/// Fiducial sets used as predictions: a reference set when the document has
/// one (so a labelled record can be scored against itself), otherwise all.
fn prediction_sets(doc: &LabelDocument) -> Result<Vec<FiducialSet>> {
    let sets = doc.fiducial_sets()?;
    let high: Vec<FiducialSet> = sets
        .iter()
        .filter(|s| s.quality == LabelQuality::High)
        .cloned()
        .collect();
    Ok(if high.is_empty() { sets } else { high })
}

fn complete_only(set: &FiducialSet) -> FiducialSet {
    let mut out = FiducialSet::new(set.quality, set.lead);
    for w in Wave::ALL {
        *out.wave_mut(w) = set.wave(w).iter().filter(|f| f.is_complete()).copied().collect();
    }
    out
}

pub fn evaluate_docs(
    preds: &BTreeMap<String, LabelDocument>,
    truths: &BTreeMap<String, LabelDocument>,
    mode: ErrorMode,
    averaging: Averaging,
) -> Result<MetricsReport> {
    let conditions = ConditionMap::default();
    let mut records = Vec::new();
    for (id, pdoc) in preds {
        let Some(tdoc) = truths.get(id) else {
            log::warn!("{id}: no reference labels, skipped");
            continue;
        };
        let (fs, n) = (tdoc.header.fs, tdoc.header.n_samples);
        if pdoc.header.n_samples != n || pdoc.header.fs != fs {
            return Err(data(format!(
                "{id}: prediction covers {} samples at {} Hz, reference {n} at {fs} Hz",
                pdoc.header.n_samples, pdoc.header.fs
            )));
        }
        let truth = tdoc
            .fiducial_sets()?
            .into_iter()
            .find(|s| s.quality == LabelQuality::High)
            .ok_or_else(|| data(format!("{id}: reference has no high-quality labels")))?;
        let span = labeled_span(&truth).unwrap_or(0..0);
        let sets: Vec<FiducialSet> = prediction_sets(pdoc)?
            .iter()
            .map(|s| restrict_to_span(s, &span))
            .collect();
        if sets.is_empty() {
            return Err(data(format!("{id}: prediction has no fiducial sets")));
        }
        let condition = tdoc
            .condition
            .clone()
            .or_else(|| conditions.condition_for(id));
        let mut m = evaluate_record(id, &truth, &sets, fs, condition, mode)?;
        let truth_mask = encode_mask(&complete_only(&truth), n, fs)?;
        let mut dice = [0.0; 3];
        for s in &sets {
            let pm = encode_mask(&complete_only(s), n, fs)?;
            let d = mask_dice(&pm, &truth_mask, 0.5, Some(span.clone()))?;
            for (acc, v) in dice.iter_mut().zip(d) {
                *acc += v / sets.len() as f64;
            }
        }
        for (w, d) in m.waves.iter_mut().zip(dice) {
            w.dice = Some(d);
        }
        records.push(m);
    }
    if records.is_empty() {
        return Err(data("no prediction matches a reference record"));
    }
    Ok(aggregate_report(&records, averaging)?)
}

fn fmt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.digits$}"))
}

pub fn summary(report: &MetricsReport) -> String {
    let mut s = format!(
        "{} records ({:?} averaging)\nwave      TP     FP     FN     Pr     Re     F1   onset(ms)      offset(ms)     Dice\n",
        report.n_records, report.averaging
    );
    for w in Wave::ALL {
        if let Some(r) = report.wave(w) {
            s.push_str(&format!(
                "{:<4} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}±{:<7} {:>6}±{:<7} {:>6}\n",
                w.name(),
                r.tp,
                r.fp,
                r.fn_,
                fmt(r.precision, 3),
                fmt(r.recall, 3),
                fmt(r.f1, 3),
                fmt(r.onset_error_ms.mean, 1),
                fmt(r.onset_error_ms.sd, 1),
                fmt(r.offset_error_ms.mean, 1),
                fmt(r.offset_error_ms.sd, 1),
                fmt(r.dice, 3),
            ));
        }
    }
    s
}

pub fn run(args: Args) -> Result<()> {
    let mode = match args.error_mode {
        ModeArg::CrossLead => ErrorMode::CrossLead,
        ModeArg::PerLead => ErrorMode::PerLead,
    };
    let averaging = match args.averaging {
        AveragingArg::Micro => Averaging::Micro,
        AveragingArg::Macro => Averaging::Macro,
    };
    let preds = load_docs(&args.pred)?;
    let truths = load_docs(&args.truth)?;
    let report = evaluate_docs(&preds, &truths, mode, averaging)?;
    print!("{}", summary(&report));
    if let Some(p) = &args.out {
        write_text(p, &(report.to_json() + "\n"))?;
    }
    if let Some(p) = &args.csv {
        write_text(p, &report.to_csv())?;
    }
    if let Some(p) = &args.compare {
        let other: MetricsReport = read_json(p).map_err(|e| usage(format!("{e:#}")))?;
        let diffs = compare_reports(&other, &report);
        println!("\n{:<28} {:>12} {:>12} {:>12}", "metric", "before", "after", "delta");
        for d in diffs.iter().filter(|d| d.delta != Some(0.0)) {
            println!(
                "{:<28} {:>12} {:>12} {:>12}",
                d.metric,
                fmt(d.left, 4),
                fmt(d.right, 4),
                fmt(d.delta, 4)
            );
        }
        if let Some(out) = &args.out {
            write_json(&out.with_extension("diff.json"), &diffs)?;
        }
    }
    Ok(())
}
