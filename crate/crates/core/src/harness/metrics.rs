//! Per-run records and the metrics file.
//!
//! The file is CSV with one row per evaluation (`EVAL`) or selection round
//! (`ROUND`). Fields that do not apply to a row are left empty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::SelectorKind;
use crate::error::{Error, Result};
use crate::rollout::RolloutCounts;
use crate::selector::{AlignmentMetric, SelectionRound};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Training step at which the round was run.
    pub step: usize,
    pub round_index: u64,
    pub metric: Option<AlignmentMetric>,
    pub corrupted_ratio: Option<f64>,
    pub target_ratio: Option<f64>,
    pub degenerate: bool,
    pub score_min: Option<f64>,
    pub score_median: Option<f64>,
    pub score_max: Option<f64>,
    /// Rollouts charged to the round; filled when the round closes.
    pub rollouts: Option<RolloutCounts>,
    pub selection: SelectionRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub selector: SelectorKind,
    pub seed: u64,
    pub evals: Vec<EvalRecord>,
    pub rounds: Vec<RoundRecord>,
    pub total_rollouts: RolloutCounts,
}

impl RunMetrics {
    pub fn new(selector: SelectorKind, seed: u64) -> Self {
        Self {
            selector,
            seed,
            evals: Vec::new(),
            rounds: Vec::new(),
            total_rollouts: RolloutCounts::default(),
        }
    }

    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// Mean corrupted ratio over rounds that have one.
    pub fn mean_corrupted_ratio(&self) -> Option<f64> {
        mean_of(self.rounds.iter().filter_map(|r| r.corrupted_ratio))
    }

    pub fn mean_target_ratio(&self) -> Option<f64> {
        mean_of(self.rounds.iter().filter_map(|r| r.target_ratio))
    }

    /// Rows in file order: by step, evaluations before rounds.
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .evals
            .iter()
            .map(|e| MetricRow {
                kind: RowKind::Eval,
                step: e.step,
                round_index: None,
                selector: self.selector,
                metric: None,
                val_acc: Some(e.val_acc),
                test_acc: Some(e.test_acc),
                corrupted_ratio: None,
                target_ratio: None,
                degenerate_flag: None,
                seed: self.seed,
                score_min: None,
                score_median: None,
                score_max: None,
            })
            .chain(self.rounds.iter().map(|r| MetricRow {
                kind: RowKind::Round,
                step: r.step,
                round_index: Some(r.round_index),
                selector: self.selector,
                metric: r.metric,
                val_acc: None,
                test_acc: None,
                corrupted_ratio: r.corrupted_ratio,
                target_ratio: r.target_ratio,
                degenerate_flag: Some(u8::from(r.degenerate)),
                seed: self.seed,
                score_min: r.score_min,
                score_median: r.score_median,
                score_max: r.score_max,
            }))
            .collect();
        rows.sort_by_key(|r| (r.step, r.kind));
        rows
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| crate::stats::mean(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowKind {
    #[serde(rename = "EVAL")]
    Eval,
    #[serde(rename = "ROUND")]
    Round,
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub kind: RowKind,
    pub step: usize,
    pub round_index: Option<u64>,
    pub selector: SelectorKind,
    pub metric: Option<AlignmentMetric>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub corrupted_ratio: Option<f64>,
    pub target_ratio: Option<f64>,
    pub degenerate_flag: Option<u8>,
    pub seed: u64,
    pub score_min: Option<f64>,
    pub score_median: Option<f64>,
    pub score_max: Option<f64>,
}

pub const COLUMNS: [&str; 14] = [
    "kind",
    "step",
    "round_index",
    "selector",
    "metric",
    "val_acc",
    "test_acc",
    "corrupted_ratio",
    "target_ratio",
    "degenerate_flag",
    "seed",
    "score_min",
    "score_median",
    "score_max",
];

pub fn write_rows<W: std::io::Write>(
    out: W,
    rows: &[MetricRow],
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the metrics of one or more runs to a single file.
pub fn export_metrics(path: &Path, runs: &[&RunMetrics]) -> Result<()> {
    let rows: Vec<MetricRow> = runs.iter().flat_map(|m| m.rows()).collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(std::io::BufWriter::new(file), &rows).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if header.iter().ne(COLUMNS) {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, e.to_string()))
}
