//! CSV emission of round histories and small summary tables.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{FedError, Result};
use crate::federation::RoundRecord;
use crate::synthdata::REFERENCE_CLASS_NAMES;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const WORKERS_FILE: &str = "workers.csv";

pub const ROUNDS_HEADER: [&str; 13] = [
    "round",
    "algorithm",
    "bal",
    "global_miou",
    "iou_sea",
    "iou_oil",
    "iou_lookalike",
    "iou_ship",
    "iou_land",
    "threshold_before",
    "threshold_after",
    "n_relevant",
    "n_rejected",
];

pub const WORKERS_HEADER: [&str; 5] = ["round", "worker_id", "local_miou", "theta", "selected"];

/// Fixed six-decimal rendering used for every float in the output files.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// A header plus string rows, written as CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| FedError::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv()?)
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| FedError::io(path, e))
}

pub fn rounds_table(history: &[RoundRecord]) -> Table {
    let mut t = Table::new(&ROUNDS_HEADER);
    for r in history {
        let mut row = vec![
            r.round.to_string(),
            r.algorithm.name().to_string(),
            on_off(r.bal_enabled).to_string(),
            fmt_f64(r.global_miou),
        ];
        for c in 0..REFERENCE_CLASS_NAMES.len() {
            row.push(fmt_opt(r.global_per_class_iou.get(c).copied().flatten()));
        }
        row.extend([
            fmt_f64(r.threshold_before),
            fmt_f64(r.threshold_after),
            r.relevant.len().to_string(),
            r.rejected.len().to_string(),
        ]);
        t.push(row);
    }
    t
}

pub fn workers_table(history: &[RoundRecord]) -> Table {
    let mut t = Table::new(&WORKERS_HEADER);
    for r in history {
        let mut workers: Vec<_> = r.workers.iter().collect();
        workers.sort_by_key(|w| w.worker_id);
        for w in workers {
            t.push(vec![
                r.round.to_string(),
                w.worker_id.to_string(),
                fmt_f64(w.miou),
                fmt_f64(w.theta),
                on_off(w.relevant).to_string(),
            ]);
        }
    }
    t
}

/// Write `rounds.csv` and `workers.csv` into `out_dir` (created if needed).
pub fn write_results(history: &[RoundRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| FedError::io(out_dir, e))?;
    let rounds = out_dir.join(ROUNDS_FILE);
    rounds_table(history).write(&rounds)?;
    let workers = out_dir.join(WORKERS_FILE);
    workers_table(history).write(&workers)?;
    Ok(vec![rounds, workers])
}

/// One parsed row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub algorithm: String,
    pub bal: bool,
    pub global_miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub threshold_before: f64,
    pub threshold_after: f64,
    pub n_relevant: usize,
    pub n_rejected: usize,
}

/// Parse a `rounds.csv` produced by [`write_results`].
pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ROUNDS_HEADER {
        return Err(FedError::invalid(format!("unexpected rounds.csv header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| FedError::invalid(format!("bad number `{s}`: {e}")))
    };
    let int = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|e| FedError::invalid(format!("bad integer `{s}`: {e}")))
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let per_class_iou = (4..9)
            .map(|i| match &rec[i] {
                "" => Ok(None),
                s => num(s).map(Some),
            })
            .collect::<Result<_>>()?;
        rows.push(RoundRow {
            round: int(&rec[0])?,
            algorithm: rec[1].to_string(),
            bal: &rec[2] == "on",
            global_miou: num(&rec[3])?,
            per_class_iou,
            threshold_before: num(&rec[9])?,
            threshold_after: num(&rec[10])?,
            n_relevant: int(&rec[11])?,
            n_rejected: int(&rec[12])?,
        });
    }
    Ok(rows)
}
