use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use ecgdel_core::harness::{
    curate, evaluate_prediction, load_dataset, make_folds, predict_record, train_fold,
    DatasetManifest, ExperimentConfig, FoldSplit, LeadMode, LogRow,
};
use ecgdel_core::mask::MaskDocument;
use ecgdel_core::metrics::{aggregate_report, ConditionMap, RecordMetrics};
use ecgdel_core::unet::{BlockType, Variants};
use ecgdel_core::wfdb::interchange::{LabelDocument, LabelHeader, LabeledRecord};
use ecgdel_core::wfdb::{find_records, ingest_record, IngestOptions};
use ecgdel_core::AugmentSpec;
use serde::{Deserialize, Serialize};

use super::evaluate::summary;
use crate::error::{data, usage};
use crate::io::{read_json, read_text, write_json, write_text};

#[derive(Clone, Copy, clap::ValueEnum)]
enum LeadModeArg {
    Single,
    Multi,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BlockArg {
    Vanilla,
    Residual,
    Xception,
}

#[derive(clap::Args)]
pub struct Args {
    /// Directory of interchange JSON records (or raw WFDB records).
    #[arg(long)]
    data: PathBuf,
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run name; outputs go to `<runs-dir>/<name>`.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    lead_mode: Option<LeadModeArg>,
    /// Pre-train on low-quality labels, then fine-tune.
    #[arg(long)]
    pretrain: bool,
    /// JSON list of augmentation specs.
    #[arg(long)]
    augment_spec: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Cap on optimizer steps per training phase.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// U-Net depth L.
    #[arg(long)]
    levels: Option<usize>,
    /// Convolutional blocks per level.
    #[arg(long)]
    blocks_per_level: Option<usize>,
    /// Channels at the first level.
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long, value_enum)]
    block_type: Option<BlockArg>,
    #[arg(long)]
    sdo_rate: Option<f64>,
    #[arg(long)]
    aspp: bool,
    #[arg(long)]
    hdc: bool,
    #[arg(long)]
    msu: bool,
    /// Print the resolved config, curation and fold plan without training.
    #[arg(long)]
    dry_run: bool,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
    #[arg(long, hide = true)]
    only_fold: Option<usize>,
}

fn resolve_config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => {
            let text = read_text(p)?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(n) = &args.name {
        cfg.name = n.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.lead_mode {
        cfg.lead_mode = match m {
            LeadModeArg::Single => LeadMode::Single,
            LeadModeArg::Multi => LeadMode::Multi,
        };
    }
    cfg.pretrain_low_quality |= args.pretrain;
    if let Some(p) = &args.augment_spec {
        let text = read_text(p)?;
        cfg.augment = serde_json::from_str::<Vec<AugmentSpec>>(&text)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    if let Some(k) = args.folds {
        cfg.folds = k;
    }
    let t = &mut cfg.training;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(t.epochs, args.epochs);
    set!(t.pretrain_epochs, args.pretrain_epochs);
    set!(t.window_len, args.window_len);
    set!(t.stride, args.stride);
    set!(t.batch_size, args.batch_size);
    set!(t.learning_rate, args.learning_rate);
    if args.max_steps.is_some() {
        t.max_steps = args.max_steps;
    }
    let m = &mut cfg.model;
    set!(m.levels, args.levels);
    set!(m.blocks_per_level, args.blocks_per_level);
    set!(m.base_channels, args.base_channels);
    set!(m.sdo_rate, args.sdo_rate);
    if let Some(b) = args.block_type {
        m.block_type = match b {
            BlockArg::Vanilla => BlockType::Vanilla,
            BlockArg::Residual => BlockType::Residual,
            BlockArg::Xception => BlockType::XCeption,
        };
    }
    m.variants = Variants {
        aspp: m.variants.aspp || args.aspp,
        hdc: m.variants.hdc || args.hdc,
        msu: m.variants.msu || args.msu,
    };
    if cfg.name.is_empty() || cfg.name.contains(['/', '\\']) || cfg.name.starts_with('.') {
        return Err(usage(format!("invalid run name {:?}", cfg.name)));
    }
    if args.parallel_folds == 0 {
        return Err(usage("--parallel-folds must be at least 1"));
    }
    Ok(cfg)
}

fn load_records(dir: &Path) -> Result<(Vec<LabeledRecord>, DatasetManifest)> {
    if !dir.is_dir() {
        return Err(data(format!("{} is not a directory", dir.display())));
    }
    let (records, manifest) = load_dataset(dir)?;
    if !records.is_empty() {
        return Ok((records, manifest));
    }
    // fall back to raw WFDB records
    let ids = find_records(dir)?;
    if ids.is_empty() {
        return Err(data(format!("no records found in {}", dir.display())));
    }
    let opts = IngestOptions::default();
    let mut records = Vec::with_capacity(ids.len());
    for id in &ids {
        let (rec, report) = ingest_record(dir, id, &opts).with_context(|| format!("record {id}"))?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        records.push(rec);
    }
    let manifest = DatasetManifest::from_records(&records);
    Ok((records, manifest))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FoldStatus {
    fold: usize,
    done: bool,
    test_records: Vec<String>,
}

/// Provenance of a run directory. Unlike `report.json`, this file carries
/// timestamps and therefore changes between invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    name: String,
    tool_version: String,
    data_dir: PathBuf,
    created_unix: u64,
    updated_unix: u64,
    dataset: DatasetManifest,
    folds: Vec<FoldStatus>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn fold_dir(run: &Path, k: usize) -> PathBuf {
    run.join(format!("fold{k}"))
}

fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("phase,epoch,step,train_loss,val_loss\n");
    for r in rows {
        let phase = serde_json::to_value(r.phase).expect("phase serializes");
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            phase.as_str().unwrap_or_default(),
            r.epoch,
            r.step,
            r.train_loss,
            r.val_loss.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    s
}

fn run_fold(
    cfg: &ExperimentConfig,
    records: &[LabeledRecord],
    split: &FoldSplit,
    k: usize,
    dir: &Path,
) -> Result<()> {
    let outcome = train_fold(cfg, records, split, k).with_context(|| format!("fold {k}"))?;
    std::fs::create_dir_all(dir.join("predictions"))?;
    outcome
        .model
        .save(&dir.join("checkpoint.json"), outcome.steps)
        .with_context(|| format!("saving fold {k} checkpoint"))?;
    write_text(&dir.join("log.csv"), &log_csv(&outcome.log))?;
    let conditions = ConditionMap::default();
    let mut metrics: Vec<RecordMetrics> = Vec::new();
    for id in &outcome.test_records {
        let rec = records
            .iter()
            .find(|r| r.id() == id)
            .expect("test ids come from the dataset");
        let masks = predict_record(
            &outcome.model,
            &rec.record,
            cfg.lead_mode,
            cfg.training.window_len,
        )?;
        let pred = evaluate_prediction(rec, masks, &cfg.evaluation, &conditions)
            .with_context(|| format!("evaluating {id}"))?;
        let doc = LabelDocument::new(
            LabelHeader {
                record_id: id.clone(),
                fs: rec.record.fs(),
                n_samples: rec.record.n_samples(),
            },
            pred.fiducials,
            rec.condition.clone(),
        );
        write_text(&dir.join(format!("predictions/{id}.labels.json")), &doc.to_json())?;
        let mask_docs: Vec<MaskDocument> = pred
            .masks
            .iter()
            .map(|m| MaskDocument::from_mask(m, cfg.evaluation.threshold))
            .collect();
        write_json(&dir.join(format!("predictions/{id}.mask.json")), &mask_docs)?;
        metrics.push(pred.metrics);
    }
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_text(&dir.join("DONE"), &format!("{}\n", outcome.steps))?;
    log::info!("fold {k} done after {} steps", outcome.steps);
    Ok(())
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = resolve_config(&args)?;
    let (records, manifest) = load_records(&args.data)?;
    let manifest = curate(&manifest, &cfg.exclusions, true, cfg.pretrain_low_quality);
    for e in manifest.excluded() {
        log::info!(
            "excluded {}: {}",
            e.record_id,
            e.exclusion_reason.as_deref().unwrap_or("")
        );
    }
    let included: Vec<&str> = manifest.included().collect();
    let records: Vec<LabeledRecord> = records
        .into_iter()
        .filter(|r| included.contains(&r.id()))
        .collect();
    let n_leads = records.first().map_or(1, |r| r.record.n_leads());
    if cfg.lead_mode == LeadMode::Multi {
        if let Some(r) = records.iter().find(|r| r.record.n_leads() != n_leads) {
            return Err(data(format!(
                "{} has {} leads; multi-lead mode needs {n_leads}",
                r.id(),
                r.record.n_leads()
            )));
        }
    }
    cfg.model.in_channels = cfg.lead_mode.in_channels(n_leads);
    cfg.validate()?;
    let split = make_folds(&included, cfg.folds, cfg.seed)?;
    if let Some(k) = args.only_fold.filter(|&k| k >= cfg.folds) {
        return Err(usage(format!("--only-fold {k} out of range")));
    }

    if args.dry_run {
        let plan = serde_json::json!({
            "config": cfg,
            "included": included,
            "excluded": manifest.excluded().collect::<Vec<_>>(),
            "fold_sizes": split.sizes(),
            "folds": split,
        });
        println!("{}", serde_json::to_string_pretty(&plan)?);
        return Ok(());
    }

    let run_dir = args.runs_dir.join(&cfg.name);
    let config_path = run_dir.join("config.json");
    if config_path.exists() {
        let old: serde_json::Value = read_json(&config_path)?;
        if old != serde_json::to_value(&cfg)? {
            return Err(usage(format!(
                "{} holds a run with a different config; pick another --name",
                run_dir.display()
            )));
        }
    }
    write_json(&config_path, &cfg)?;
    write_json(&run_dir.join("folds.json"), &split)?;
    let manifest_path = run_dir.join("manifest.json");
    let created = read_json::<RunManifest>(&manifest_path)
        .map(|m| m.created_unix)
        .unwrap_or_else(|_| now());
    let statuses = |run_dir: &Path| -> Vec<FoldStatus> {
        (0..split.k)
            .map(|k| FoldStatus {
                fold: k,
                done: fold_dir(run_dir, k).join("DONE").exists(),
                test_records: split.test_ids(k).iter().map(|s| s.to_string()).collect(),
            })
            .collect()
    };
    let mut run_manifest = RunManifest {
        name: cfg.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        data_dir: args.data.clone(),
        created_unix: created,
        updated_unix: now(),
        dataset: manifest.clone(),
        folds: statuses(&run_dir),
    };
    write_json(&manifest_path, &run_manifest)?;

    let todo: Vec<usize> = (0..split.k)
        .filter(|&k| args.only_fold.is_none_or(|o| o == k))
        .filter(|&k| {
            let done = fold_dir(&run_dir, k).join("DONE").exists();
            if done {
                log::info!("fold {k} already complete, skipping");
            }
            !done
        })
        .collect();
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    let workers = args.parallel_folds.min(todo.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failure.lock().expect("lock").is_some() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&k) = todo.get(i) else { return };
                eprintln!("fold {k}/{}: training", split.k);
                if let Err(e) = run_fold(&cfg, &records, &split, k, &fold_dir(&run_dir, k)) {
                    failure.lock().expect("lock").get_or_insert(e);
                    return;
                }
            });
        }
    });
    run_manifest.folds = statuses(&run_dir);
    run_manifest.updated_unix = now();
    write_json(&manifest_path, &run_manifest)?;
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }

    let pending: Vec<usize> = run_manifest
        .folds
        .iter()
        .filter(|f| !f.done)
        .map(|f| f.fold)
        .collect();
    if !pending.is_empty() {
        println!("folds still pending: {pending:?}; report not written");
        return Ok(());
    }
    let mut all: Vec<RecordMetrics> = Vec::new();
    for k in 0..split.k {
        let part: Vec<RecordMetrics> = read_json(&fold_dir(&run_dir, k).join("metrics.json"))?;
        all.extend(part);
    }
    all.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let report = aggregate_report(&all, cfg.evaluation.averaging)?;
    write_text(&run_dir.join("report.json"), &(report.to_json() + "\n"))?;
    write_text(&run_dir.join("report.csv"), &report.to_csv())?;
    print!("{}", summary(&report));
    println!("report: {}", run_dir.join("report.json").display());
    Ok(())
}
