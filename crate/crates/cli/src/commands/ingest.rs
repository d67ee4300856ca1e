use std::path::PathBuf;

use anyhow::{Context, Result};
use ecgdel_core::wfdb::interchange::export_interchange;
use ecgdel_core::wfdb::{find_records, ingest_record, IngestOptions, IngestReport};

use crate::error::{data, usage};
use crate::io::{read_json, write_json, write_text};

#[derive(clap::Args)]
pub struct Args {
    /// Directory holding `.hea`, signal and annotation files.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for `<record>.json` files and `ingest_report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Fail when any expected annotation file is missing.
    #[arg(long)]
    strict: bool,
    /// JSON file overriding which annotation extensions are read.
    #[arg(long)]
    options: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let opts: IngestOptions = match &args.options {
        Some(p) => read_json(p).map_err(|e| usage(format!("{e:#}")))?,
        None => IngestOptions::default(),
    };
    if !args.input.is_dir() {
        return Err(data(format!("{} is not a directory", args.input.display())));
    }
    let ids = find_records(&args.input)?;
    if ids.is_empty() {
        return Err(data(format!("no records found in {}", args.input.display())));
    }
    let mut reports: Vec<IngestReport> = Vec::with_capacity(ids.len());
    for id in &ids {
        let (rec, report) =
            ingest_record(&args.input, id, &opts).with_context(|| format!("record {id}"))?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        if !report.missing.is_empty() {
            log::warn!("{id}: missing {}", report.missing.join(", "));
        }
        write_text(&args.out.join(format!("{id}.json")), &export_interchange(&rec))?;
        reports.push(report);
    }
    write_json(&args.out.join("ingest_report.json"), &reports)?;
    let incomplete: Vec<&str> = reports
        .iter()
        .filter(|r| !r.missing.is_empty())
        .map(|r| r.record_id.as_str())
        .collect();
    println!(
        "ingested {} records into {} ({} with missing annotations)",
        reports.len(),
        args.out.display(),
        incomplete.len()
    );
    if args.strict && !incomplete.is_empty() {
        return Err(data(format!(
            "missing annotation files for: {}",
            incomplete.join(", ")
        )));
    }
    Ok(())
}
