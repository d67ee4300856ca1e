//! Correspondence-based detection and delineation scores.
//!
//! For one wave, true beat `j` and predicted beat `k` correspond
//! (`H[j][k] = 1`) when any predicted fiducial of `k` lies inside the true
//! interval `[on_j, off_j]`, or any true fiducial of `j` lies inside the
//! predicted interval. Per-lead matrices are OR-fused when they share a shape.
//!
//! Detection counts come from a one-to-one matching on `H`, so
//! `TP + FN = M` and `TP + FP = M̂` always hold. The matching is of maximum
//! cardinality; among maximum matchings, the set of matched true beats is the
//! lexicographically earliest one (true beats are processed in order).
//!
//! Boundary errors are `(true - pred) / fs` in ms. For every matched true beat
//! the candidate with the smallest `|error|` among all `k` with `H[j][k] = 1`
//! is used, searched across leads by default (ties keep the first candidate
//! in lead-then-beat order).

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::mask::DelineationMask;
use crate::wfdb::{FiducialSet, Wave, WaveFiducial};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("correspondence matrices differ in shape: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("no leads to evaluate")]
    NoLeads,
    #[error("no records to aggregate")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sampling frequency must be positive, got {0}")]
    BadFs(f64),
}

/// Boolean `[M × M̂]` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl CorrespondenceMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    /// Panics on ragged input.
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(
            rows.iter().all(|r| r.len() == cols),
            "ragged correspondence rows"
        );
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut h = Self::zeros(n, n);
        (0..n).for_each(|i| h.set(i, i, true));
        h
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, j: usize, k: usize) -> bool {
        self.data[j * self.cols + k]
    }

    pub fn set(&mut self, j: usize, k: usize, v: bool) {
        self.data[j * self.cols + k] = v;
    }

    /// The raw `Σ H` count (may exceed `min(M, M̂)`).
    pub fn sum(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    fn row(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.cols).filter(move |&k| self.get(j, k))
    }
}

fn inside(x: usize, (on, off): (usize, usize)) -> bool {
    on <= x && x <= off
}

pub fn correspondence(truth: &[WaveFiducial], pred: &[WaveFiducial]) -> CorrespondenceMatrix {
    let mut h = CorrespondenceMatrix::zeros(truth.len(), pred.len());
    for (j, t) in truth.iter().enumerate() {
        for (k, p) in pred.iter().enumerate() {
            let pred_in_true = t
                .interval()
                .is_some_and(|iv| p.points().any(|x| inside(x, iv)));
            let true_in_pred = p
                .interval()
                .is_some_and(|iv| t.points().any(|x| inside(x, iv)));
            h.set(j, k, pred_in_true || true_in_pred);
        }
    }
    h
}

/// Elementwise OR across leads.
pub fn fuse_leads(hs: &[CorrespondenceMatrix]) -> Result<CorrespondenceMatrix, MetricsError> {
    let (first, rest) = hs.split_first().ok_or(MetricsError::NoLeads)?;
    let mut fused = first.clone();
    for h in rest {
        if h.shape() != fused.shape() {
            return Err(MetricsError::ShapeMismatch(fused.shape(), h.shape()));
        }
        fused
            .data
            .iter_mut()
            .zip(&h.data)
            .for_each(|(a, &b)| *a |= b);
    }
    Ok(fused)
}

/// Maximum-cardinality one-to-one matching; returns the partner of each
/// true beat.
pub fn match_one_to_one(h: &CorrespondenceMatrix) -> Vec<Option<usize>> {
    fn augment(
        h: &CorrespondenceMatrix,
        j: usize,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for k in h.row(j) {
            if seen[k] {
                continue;
            }
            seen[k] = true;
            if owner[k].is_none_or(|other| augment(h, other, seen, owner)) {
                owner[k] = Some(j);
                return true;
            }
        }
        false
    }

    let mut owner = vec![None; h.cols];
    for j in 0..h.rows {
        let mut seen = vec![false; h.cols];
        augment(h, j, &mut seen, &mut owner);
    }
    let mut partner = vec![None; h.rows];
    for (k, j) in owner.iter().enumerate() {
        if let Some(j) = j {
            partner[*j] = Some(k);
        }
    }
    partner
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Unmatched `Σ H`, reported for transparency.
    pub raw_matches: usize,
}

impl DetectionCounts {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        f1(self.precision()?, self.recall()?)
    }

    fn add(&mut self, o: &DetectionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.raw_matches += o.raw_matches;
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn f1(pr: f64, re: f64) -> Option<f64> {
    Some(if pr + re > 0.0 {
        2.0 * pr * re / (pr + re)
    } else {
        0.0
    })
}

pub fn count_detection(h: &CorrespondenceMatrix) -> DetectionCounts {
    let tp = match_one_to_one(h).iter().flatten().count();
    DetectionCounts {
        tp,
        fp: h.cols - tp,
        fn_: h.rows - tp,
        raw_matches: h.sum(),
    }
}

/// Predictions of one lead for one wave, with their matching against truth.
#[derive(Debug, Clone)]
pub struct LeadMatch<'a> {
    pub pred: &'a [WaveFiducial],
    pub h: CorrespondenceMatrix,
    pub partner: Vec<Option<usize>>,
}

impl<'a> LeadMatch<'a> {
    pub fn new(truth: &[WaveFiducial], pred: &'a [WaveFiducial]) -> Self {
        let h = correspondence(truth, pred);
        let partner = match_one_to_one(&h);
        Self { pred, h, partner }
    }
}

/// Which predictions are candidates for a matched true beat.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// One error per true beat matched in any lead, minimized over every
    /// lead's corresponding predictions.
    #[default]
    CrossLead,
    /// One error per matched (true beat, lead) pair, minimized within that lead.
    PerLead,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryErrors {
    pub onset_ms: Vec<f64>,
    pub offset_ms: Vec<f64>,
}

/// Candidate groups: each is a list of (lead, k) for one counted true beat.
fn candidate_groups(
    leads: &[LeadMatch<'_>],
    j: usize,
    mode: ErrorMode,
) -> Vec<Vec<(usize, usize)>> {
    let in_lead = |l: usize| leads[l].h.row(j).map(move |k| (l, k));
    match mode {
        ErrorMode::CrossLead => {
            if leads.iter().any(|m| m.partner[j].is_some()) {
                vec![(0..leads.len()).flat_map(in_lead).collect()]
            } else {
                vec![]
            }
        }
        ErrorMode::PerLead => (0..leads.len())
            .filter(|&l| leads[l].partner[j].is_some())
            .map(|l| in_lead(l).collect())
            .collect(),
    }
}

fn ms(t: usize, p: usize, fs: f64) -> f64 {
    (t as f64 - p as f64) / fs * 1000.0
}

fn best_error(
    truth: Option<usize>,
    cands: &[(usize, usize)],
    leads: &[LeadMatch<'_>],
    fs: f64,
    pick: impl Fn(&WaveFiducial) -> Option<usize>,
) -> Option<f64> {
    let t = truth?;
    let mut best: Option<f64> = None;
    for &(l, k) in cands {
        if let Some(p) = pick(&leads[l].pred[k]) {
            let e = ms(t, p, fs);
            if best.is_none_or(|b| e.abs() < b.abs()) {
                best = Some(e);
            }
        }
    }
    best
}

pub fn boundary_errors(
    truth: &[WaveFiducial],
    leads: &[LeadMatch<'_>],
    fs: f64,
    mode: ErrorMode,
) -> BoundaryErrors {
    let mut out = BoundaryErrors::default();
    for (j, t) in truth.iter().enumerate() {
        for cands in candidate_groups(leads, j, mode) {
            out.onset_ms
                .extend(best_error(t.onset, &cands, leads, fs, |p| p.onset));
            out.offset_ms
                .extend(best_error(t.offset, &cands, leads, fs, |p| p.offset));
        }
    }
    out
}

/// `|width_pred - width_true|` in ms per counted true beat, using the
/// candidate with the smallest combined onset+offset error.
pub fn width_errors(
    truth: &[WaveFiducial],
    leads: &[LeadMatch<'_>],
    fs: f64,
    mode: ErrorMode,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (j, t) in truth.iter().enumerate() {
        let Some((t_on, t_off)) = t.interval() else {
            continue;
        };
        for cands in candidate_groups(leads, j, mode) {
            let best = cands
                .iter()
                .filter_map(|&(l, k)| leads[l].pred[k].interval())
                .map(|(on, off)| ((t_on.abs_diff(on) + t_off.abs_diff(off)), (on, off)))
                .reduce(|a, b| if b.0 < a.0 { b } else { a });
            if let Some((_, (on, off))) = best {
                let dw = (off - on) as f64 - (t_off - t_on) as f64;
                out.push(dw.abs() / fs * 1000.0);
            }
        }
    }
    out
}

/// `2|A∩B| / (|A|+|B|)` after binarizing at `threshold`; 1 when both are empty.
pub fn dice_score(
    pred: ArrayView1<'_, f32>,
    target: ArrayView1<'_, f32>,
    threshold: f32,
) -> Result<f64, MetricsError> {
    if pred.len() != target.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), target.len()));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let (p, t) = (p >= threshold, t >= threshold);
        inter += usize::from(p && t);
        total += usize::from(p) + usize::from(t);
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Per-wave Dice over `span` (the whole mask when `None`).
pub fn mask_dice(
    pred: &DelineationMask,
    truth: &DelineationMask,
    threshold: f32,
    span: Option<Range<usize>>,
) -> Result<[f64; 3], MetricsError> {
    if pred.n_samples() != truth.n_samples() {
        return Err(MetricsError::LengthMismatch(
            pred.n_samples(),
            truth.n_samples(),
        ));
    }
    let span = span.unwrap_or(0..pred.n_samples());
    let mut out = [0.0; 3];
    for w in Wave::ALL {
        let p = pred.channel(w);
        let t = truth.channel(w);
        out[w.index()] = dice_score(
            p.slice(ndarray::s![span.clone()]),
            t.slice(ndarray::s![span.clone()]),
            threshold,
        )?;
    }
    Ok(out)
}

/// Samples from the first to the last labeled fiducial of `set`, the only
/// region where absent labels mean absent waves.
pub fn labeled_span(set: &FiducialSet) -> Option<Range<usize>> {
    let pts = set.waves.iter().flatten().flat_map(WaveFiducial::points);
    let (lo, hi) = pts.fold((usize::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
    (lo <= hi).then(|| lo..hi + 1)
}

/// Metrics of one wave within one record, kept unreduced for pooling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WaveRecordMetrics {
    pub counts: DetectionCounts,
    pub errors: BoundaryErrors,
    pub width_errors_ms: Vec<f64>,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub record_id: String,
    pub condition: Option<String>,
    pub waves: [WaveRecordMetrics; 3],
}

impl RecordMetrics {
    pub fn wave(&self, wave: Wave) -> &WaveRecordMetrics {
        &self.waves[wave.index()]
    }
}

/// Scores one wave: detection counts are summed over leads, errors follow
/// `mode`.
pub fn evaluate_wave(
    truth: &[WaveFiducial],
    preds: &[&[WaveFiducial]],
    fs: f64,
    mode: ErrorMode,
) -> WaveRecordMetrics {
    let leads: Vec<LeadMatch<'_>> = preds.iter().map(|p| LeadMatch::new(truth, p)).collect();
    let mut counts = DetectionCounts::default();
    for m in &leads {
        counts.add(&count_detection(&m.h));
    }
    WaveRecordMetrics {
        counts,
        errors: boundary_errors(truth, &leads, fs, mode),
        width_errors_ms: width_errors(truth, &leads, fs, mode),
        dice: None,
    }
}

/// Scores a record's predictions (one set per lead, or a single shared set)
/// against one reference set.
pub fn evaluate_record(
    record_id: &str,
    truth: &FiducialSet,
    preds: &[FiducialSet],
    fs: f64,
    condition: Option<String>,
    mode: ErrorMode,
) -> Result<RecordMetrics, MetricsError> {
    if !(fs > 0.0) {
        return Err(MetricsError::BadFs(fs));
    }
    if preds.is_empty() {
        return Err(MetricsError::NoLeads);
    }
    let waves = Wave::ALL.map(|w| {
        let lead_preds: Vec<&[WaveFiducial]> = preds.iter().map(|p| p.wave(w)).collect();
        evaluate_wave(truth.wave(w), &lead_preds, fs, mode)
    });
    Ok(RecordMetrics {
        record_id: record_id.to_string(),
        condition,
        waves,
    })
}

/// Mean and population SD; `None` when there are no samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl ErrorStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self {
                mean: None,
                sd: None,
                n: 0,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            sd: Some(var.sqrt()),
            n: xs.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool counts and errors over all records before computing ratios.
    #[default]
    Micro,
    /// Average per-record ratios.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub raw_matches: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub onset_error_ms: ErrorStats,
    pub offset_error_ms: ErrorStats,
    pub width_error_ms: ErrorStats,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_records: usize,
    pub averaging: Averaging,
    /// Keyed by wave name: "P", "QRS", "T".
    pub waves: BTreeMap<String, WaveReport>,
    /// Mean absolute QRS width error per source condition.
    pub qrs_width_by_condition: BTreeMap<String, ErrorStats>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate_report(
    records: &[RecordMetrics],
    averaging: Averaging,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut waves = BTreeMap::new();
    for w in Wave::ALL {
        let per: Vec<&WaveRecordMetrics> = records.iter().map(|r| r.wave(w)).collect();
        let mut counts = DetectionCounts::default();
        per.iter().for_each(|m| counts.add(&m.counts));
        let pool = |f: fn(&WaveRecordMetrics) -> &Vec<f64>| -> Vec<f64> {
            per.iter().flat_map(|m| f(m).iter().copied()).collect()
        };
        let (precision, recall, f1) = match averaging {
            Averaging::Micro => (counts.precision(), counts.recall(), counts.f1()),
            Averaging::Macro => (
                mean_of(per.iter().filter_map(|m| m.counts.precision())),
                mean_of(per.iter().filter_map(|m| m.counts.recall())),
                mean_of(per.iter().filter_map(|m| m.counts.f1())),
            ),
        };
        waves.insert(
            w.name().to_string(),
            WaveReport {
                tp: counts.tp,
                fp: counts.fp,
                fn_: counts.fn_,
                raw_matches: counts.raw_matches,
                precision,
                recall,
                f1,
                onset_error_ms: ErrorStats::from_samples(&pool(|m| &m.errors.onset_ms)),
                offset_error_ms: ErrorStats::from_samples(&pool(|m| &m.errors.offset_ms)),
                width_error_ms: ErrorStats::from_samples(&pool(|m| &m.width_errors_ms)),
                dice: mean_of(per.iter().filter_map(|m| m.dice)),
            },
        );
    }
    let mut by_condition: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(c) = &r.condition {
            by_condition
                .entry(c.clone())
                .or_default()
                .extend(&r.wave(Wave::Qrs).width_errors_ms);
        }
    }
    let qrs_width_by_condition = by_condition
        .into_iter()
        .map(|(c, xs)| (c, ErrorStats::from_samples(&xs)))
        .collect();
    Ok(MetricsReport {
        n_records: records.len(),
        averaging,
        waves,
        qrs_width_by_condition,
    })
}

impl MetricsReport {
    pub fn wave(&self, wave: Wave) -> Option<&WaveReport> {
        self.waves.get(wave.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Every scalar cell as `"<wave>.<metric>"` (or `"width.<condition>.<stat>"`).
    pub fn flatten(&self) -> BTreeMap<String, Option<f64>> {
        let mut out = BTreeMap::new();
        for (name, w) in &self.waves {
            let mut put = |k: &str, v: Option<f64>| {
                out.insert(format!("{name}.{k}"), v);
            };
            put("tp", Some(w.tp as f64));
            put("fp", Some(w.fp as f64));
            put("fn", Some(w.fn_ as f64));
            put("precision", w.precision);
            put("recall", w.recall);
            put("f1", w.f1);
            put("onset_mean_ms", w.onset_error_ms.mean);
            put("onset_sd_ms", w.onset_error_ms.sd);
            put("offset_mean_ms", w.offset_error_ms.mean);
            put("offset_sd_ms", w.offset_error_ms.sd);
            put("width_mean_ms", w.width_error_ms.mean);
            put("dice", w.dice);
        }
        for (cond, s) in &self.qrs_width_by_condition {
            out.insert(format!("width.{cond}.mean_ms"), s.mean);
            out.insert(format!("width.{cond}.sd_ms"), s.sd);
        }
        out
    }

    /// `key,value` rows; undefined cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.flatten() {
            s.push_str(&format!(
                "{},{}\n",
                csv_field(&k),
                v.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiff {
    pub metric: String,
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub delta: Option<f64>,
}

/// Per-cell `right - left` over the union of both reports' cells.
pub fn compare_reports(left: &MetricsReport, right: &MetricsReport) -> Vec<CellDiff> {
    let (l, r) = (left.flatten(), right.flatten());
    let mut keys: Vec<&String> = l.keys().chain(r.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let a = l.get(k).copied().flatten();
            let b = r.get(k).copied().flatten();
            CellDiff {
                metric: k.clone(),
                left: a,
                right: b,
                delta: a.zip(b).map(|(a, b)| b - a),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionRule {
    pub prefix: String,
    #[serde(default)]
    pub min: Option<u64>,
    #[serde(default)]
    pub max: Option<u64>,
    pub condition: String,
}

/// Maps record ids to the source condition used to group QRS-width errors.
/// Explicit entries win over rules; rules are tried in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionMap {
    #[serde(default)]
    pub records: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<ConditionRule>,
}

impl Default for ConditionMap {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/qt_conditions.json"))
            .expect("bundled condition map")
    }
}

impl ConditionMap {
    pub fn condition_for(&self, record_id: &str) -> Option<String> {
        if let Some(c) = self.records.get(record_id) {
            return Some(c.clone());
        }
        self.rules
            .iter()
            .find(|r| r.matches(record_id))
            .map(|r| r.condition.clone())
    }
}

impl ConditionRule {
    fn matches(&self, id: &str) -> bool {
        let Some(rest) = id.strip_prefix(&self.prefix) else {
            return false;
        };
        if self.min.is_none() && self.max.is_none() {
            return true;
        }
        let Ok(n) = rest.parse::<u64>() else {
            return false;
        };
        self.min.is_none_or(|m| n >= m) && self.max.is_none_or(|m| n <= m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfdb::LabelQuality;
    use ndarray::arr1;
    use proptest::prelude::*;

    fn beat(on: usize, peak: usize, off: usize) -> WaveFiducial {
        WaveFiducial::complete(on, peak, off)
    }

    #[test]
    fn correspondence_examples() {
        assert_eq!(
            correspondence(&[beat(10, 15, 20)], &[beat(14, 15, 16)]),
            CorrespondenceMatrix::identity(1)
        );
        assert_eq!(
            correspondence(&[beat(10, 15, 20)], &[beat(30, 35, 40)]).sum(),
            0
        );
        // predicted interval contains the true offset only
        let pred = WaveFiducial {
            onset: Some(21),
            peak: None,
            offset: Some(25),
        };
        let t = WaveFiducial {
            onset: Some(10),
            peak: Some(15),
            offset: Some(20),
        };
        assert_eq!(correspondence(&[t], &[pred]).sum(), 0);
        let pred = WaveFiducial {
            onset: Some(18),
            peak: None,
            offset: Some(25),
        };
        assert_eq!(correspondence(&[t], &[pred]).sum(), 1);
    }

    #[test]
    fn fusion_examples() {
        let a = CorrespondenceMatrix::from_rows(&[vec![false]]);
        let b = CorrespondenceMatrix::from_rows(&[vec![true]]);
        assert_eq!(fuse_leads(&[a.clone(), b.clone()]).unwrap(), b);
        assert_eq!(fuse_leads(&[b.clone(), b.clone()]).unwrap(), b);
        assert_eq!(fuse_leads(&[a.clone()]).unwrap(), a);
        let l1 = CorrespondenceMatrix::from_rows(&[vec![true, false], vec![false, false]]);
        let l2 = CorrespondenceMatrix::from_rows(&[vec![false, false], vec![false, true]]);
        assert_eq!(
            fuse_leads(&[l1, l2]).unwrap(),
            CorrespondenceMatrix::identity(2)
        );
        assert_eq!(fuse_leads(&[]), Err(MetricsError::NoLeads));
        assert!(matches!(
            fuse_leads(&[a, CorrespondenceMatrix::zeros(1, 2)]),
            Err(MetricsError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn detection_examples() {
        let c = count_detection(&CorrespondenceMatrix::identity(3));
        assert_eq!((c.tp, c.fp, c.fn_), (3, 0, 0));
        let c = count_detection(&CorrespondenceMatrix::zeros(2, 3));
        assert_eq!((c.tp, c.fp, c.fn_), (0, 3, 2));
        let column = CorrespondenceMatrix::from_rows(&[vec![true], vec![true]]);
        let c = count_detection(&column);
        assert_eq!((c.tp, c.fp, c.fn_, c.raw_matches), (1, 0, 1, 2));
    }

    #[test]
    fn matching_prefers_augmenting_paths() {
        // greedy j0->k0 would leave j1 unmatched
        let h = CorrespondenceMatrix::from_rows(&[vec![true, true], vec![true, false]]);
        assert_eq!(match_one_to_one(&h), vec![Some(1), Some(0)]);
    }

    #[test]
    fn boundary_error_examples() {
        let t = [beat(100, 110, 120)];
        let p = [beat(104, 110, 120)];
        let m = evaluate_wave(&t, &[&p], 250.0, ErrorMode::CrossLead);
        assert_eq!(m.errors.onset_ms, vec![-16.0]);
        assert_eq!(m.errors.offset_ms, vec![0.0]);

        let p2 = [beat(101, 110, 120)];
        let m = evaluate_wave(&t, &[&p, &p2], 250.0, ErrorMode::CrossLead);
        assert_eq!(m.errors.onset_ms, vec![-4.0]);
        let strict = evaluate_wave(&t, &[&p, &p2], 250.0, ErrorMode::PerLead);
        assert_eq!(strict.errors.onset_ms, vec![-16.0, -4.0]);

        let stats = ErrorStats::from_samples(&[0.0]);
        assert_eq!((stats.mean, stats.sd), (Some(0.0), Some(0.0)));
        assert_eq!(ErrorStats::from_samples(&[]).mean, None);
    }

    #[test]
    fn width_error_examples() {
        // fs 1000 -> one sample per ms
        let t = [beat(0, 40, 80), beat(200, 240, 280)];
        let p = [beat(0, 40, 88), beat(200, 240, 280)];
        let m = evaluate_wave(&t, &[&p], 1000.0, ErrorMode::CrossLead);
        assert_eq!(m.width_errors_ms, vec![8.0, 0.0]);
        let p = [beat(0, 40, 84), beat(200, 240, 268)];
        let m = evaluate_wave(&t, &[&p], 1000.0, ErrorMode::CrossLead);
        assert_eq!(ErrorStats::from_samples(&m.width_errors_ms).mean, Some(8.0));
    }

    #[test]
    fn dice_examples() {
        let a = arr1(&[1.0f32, 1.0, 0.0, 0.0]);
        let b = arr1(&[1.0f32, 0.0, 0.0, 0.0]);
        assert_eq!(dice_score(a.view(), a.view(), 0.5).unwrap(), 1.0);
        assert!((dice_score(a.view(), b.view(), 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let c = arr1(&[0.0f32, 0.0, 1.0, 1.0]);
        assert_eq!(dice_score(a.view(), c.view(), 0.5).unwrap(), 0.0);
        let z = arr1(&[0.0f32; 4]);
        assert_eq!(dice_score(z.view(), z.view(), 0.5).unwrap(), 1.0);
    }

    fn record(id: &str, tp: usize, fp: usize) -> RecordMetrics {
        let mut waves: [WaveRecordMetrics; 3] = Default::default();
        waves[1].counts = DetectionCounts {
            tp,
            fp,
            fn_: 0,
            raw_matches: tp,
        };
        RecordMetrics {
            record_id: id.into(),
            condition: None,
            waves,
        }
    }

    #[test]
    fn pooled_vs_macro_precision() {
        let recs = [record("a", 9, 1), record("b", 1, 9)];
        let micro = aggregate_report(&recs, Averaging::Micro).unwrap();
        assert_eq!(micro.wave(Wave::Qrs).unwrap().precision, Some(0.5));
        let macro_ = aggregate_report(&recs, Averaging::Macro).unwrap();
        assert!((macro_.wave(Wave::Qrs).unwrap().precision.unwrap() - 0.5).abs() < 1e-12);
        let single = aggregate_report(&recs[..1], Averaging::Micro).unwrap();
        assert_eq!(single.wave(Wave::Qrs).unwrap().precision, Some(0.9));
        assert_eq!(
            aggregate_report(&[], Averaging::Micro),
            Err(MetricsError::Empty)
        );
    }

    #[test]
    fn perfect_prediction_and_report_outputs() {
        let mut set = FiducialSet::new(LabelQuality::High, None);
        set.wave_mut(Wave::P)
            .extend([beat(10, 15, 20), beat(210, 215, 220)]);
        set.wave_mut(Wave::Qrs)
            .extend([beat(30, 35, 40), beat(230, 235, 240)]);
        let r = evaluate_record(
            "sel100",
            &set,
            &[set.clone()],
            250.0,
            Some("X".into()),
            ErrorMode::CrossLead,
        )
        .unwrap();
        let rep = aggregate_report(&[r], Averaging::Micro).unwrap();
        let q = rep.wave(Wave::Qrs).unwrap();
        assert_eq!(
            (q.precision, q.recall, q.f1),
            (Some(1.0), Some(1.0), Some(1.0))
        );
        assert_eq!(q.onset_error_ms.mean, Some(0.0));
        assert_eq!(rep.wave(Wave::T).unwrap().precision, None);
        assert!(rep.qrs_width_by_condition.contains_key("X"));
        let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_csv().contains("QRS.precision,1\n"));
        let diff = compare_reports(&rep, &rep);
        assert!(diff.iter().all(|d| d.delta.is_none_or(|x| x == 0.0)));
    }

    #[test]
    fn labeled_span_covers_fiducials() {
        let mut set = FiducialSet::new(LabelQuality::High, None);
        assert_eq!(labeled_span(&set), None);
        set.wave_mut(Wave::T).push(beat(50, 60, 70));
        set.wave_mut(Wave::P).push(beat(5, 8, 9));
        assert_eq!(labeled_span(&set), Some(5..71));
    }

    #[test]
    fn condition_map_rules() {
        let m = ConditionMap::default();
        assert_eq!(
            m.condition_for("sel100").as_deref(),
            Some("MIT-BIH Arrhythmia")
        );
        assert_eq!(
            m.condition_for("sel16265").as_deref(),
            Some("Normal Sinus Rhythm")
        );
        assert_eq!(
            m.condition_for("sele0104").as_deref(),
            Some("European ST-T")
        );
        assert_eq!(
            m.condition_for("sel803").as_deref(),
            Some("Supraventricular Arrhythmia")
        );
        assert_eq!(m.condition_for("sel44").as_deref(), Some("Sudden death"));
        assert_eq!(m.condition_for("foo"), None);
    }

    fn arb_beats() -> impl Strategy<Value = Vec<WaveFiducial>> {
        prop::collection::vec((0usize..40, 1usize..15), 0..6).prop_map(|raw| {
            let mut t = 0;
            raw.into_iter()
                .map(|(gap, w)| {
                    let on = t + gap;
                    t = on + w + 1;
                    beat(on, on + w / 2, on + w)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn counts_are_conserved(t in arb_beats(), p in arb_beats()) {
            let c = count_detection(&correspondence(&t, &p));
            prop_assert_eq!(c.tp + c.fn_, t.len());
            prop_assert_eq!(c.tp + c.fp, p.len());
        }

        #[test]
        fn shift_moves_mean_not_sd(t in arb_beats(), d in 0usize..2) {
            // the shift must not create overlaps with neighbouring beats
            prop_assume!(t.windows(2).all(|w| w[1].onset.unwrap() > w[0].offset.unwrap() + d));
            let p: Vec<WaveFiducial> = t.iter().map(|b| beat(b.onset.unwrap() + d, b.peak.unwrap() + d, b.offset.unwrap() + d)).collect();
            let m = evaluate_wave(&t, &[&p], 250.0, ErrorMode::CrossLead);
            let s = ErrorStats::from_samples(&m.errors.onset_ms);
            if let Some(mean) = s.mean {
                prop_assert!((mean + d as f64 * 4.0).abs() < 1e-9);
                prop_assert!(s.sd.unwrap().abs() < 1e-9);
            }
            prop_assert_eq!(m.counts.tp, t.len());
        }

        #[test]
        fn fusion_is_commutative(t in arb_beats(), a in arb_beats()) {
            let h1 = correspondence(&t, &a);
            let h2 = correspondence(&t, &a.iter().rev().copied().collect::<Vec<_>>());
            if h1.shape() == h2.shape() {
                prop_assert_eq!(fuse_leads(&[h1.clone(), h2.clone()]).unwrap(), fuse_leads(&[h2, h1]).unwrap());
            }
        }
    }
}
