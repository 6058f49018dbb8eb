use std::path::Path;

use serde::Serialize;

use super::grid::GridOutcome;
use super::select::Selection;
use super::trainer::{EpochRecord, TrialResult};
use crate::error::{Error, Result};

/// Writes the per-epoch trace as `epoch,objective,epsilon,dev_ll`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in trace {
        w.serialize(r)?;
    }
    if trace.is_empty() {
        w.write_record(["epoch", "objective", "epsilon", "dev_ll"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Serialize)]
struct ScatterRow {
    family: &'static str,
    index: usize,
    seed: u64,
    lambda: f64,
    dev_ll: f64,
    dev_epsilon: f64,
    dev_delta_dp: f64,
    selected: bool,
}

/// One row per trial: dev LL against dev ε-DF, for trade-off plots.
pub fn write_scatter_csv(path: impl AsRef<Path>, outcome: &GridOutcome) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let rows = outcome
        .vanilla
        .iter()
        .enumerate()
        .map(|(i, t)| ("vanilla", i, t, i == outcome.best_vanilla))
        .chain(outcome.fair.iter().enumerate().map(|(i, t)| ("fair", i, t, i == outcome.selection.winner)));
    for (family, index, t, selected) in rows {
        w.serialize(ScatterRow {
            family,
            index,
            seed: t.config.seed,
            lambda: t.config.lambda,
            dev_ll: t.dev_ll,
            dev_epsilon: t.dev_epsilon,
            dev_delta_dp: t.dev_delta_dp,
            selected,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Selection report naming both winners.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport<'a> {
    pub selection: &'a Selection,
    pub best_vanilla: &'a TrialResult,
    pub selected_fair: &'a TrialResult,
    pub vanilla_trials: usize,
    pub fair_trials: usize,
    pub failed_trials: usize,
}

impl<'a> SelectionReport<'a> {
    pub fn new(outcome: &'a GridOutcome) -> Self {
        SelectionReport {
            selection: &outcome.selection,
            best_vanilla: outcome.best_vanilla_result(),
            selected_fair: outcome.selected_fair(),
            vanilla_trials: outcome.vanilla.len(),
            fair_trials: outcome.fair.len(),
            failed_trials: outcome.failures.len(),
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
