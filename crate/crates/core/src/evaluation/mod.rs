//! Held-out likelihood, mutual information, clustering indices, regression
//! metrics, and per-model report assembly.
//!
//! The held-out LL enumerates the discrete latent configurations exactly,
//! so no sampling temperature is involved at evaluation time. MI uses the
//! plug-in estimator, with continuous variables cut into
//! [`MI_BINS`] equal-frequency bins.

mod metrics;
mod report;


pub use metrics::{
    calinski_harabasz, davies_bouldin, plugin_mi, quantile_bins, regression_metrics, ChScore, RegressionMetrics,
    CH_SENTINEL, MI_BINS,
};
pub use report::{
    assemble_report, config_hash, write_group_targets_csv, write_reports_csv, EvalReport, GroupTarget, MetricValue,
    PredictiveMetrics, ReportMeta,
};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Inputs, Model};

/// Mean exact log marginal likelihood per row.
pub fn heldout_ll(model: &Model, x: &Inputs) -> Result<f64> {
    let ll = model.log_evidence(x)?;
    if ll.is_empty() {
        return Err(Error::Data("held-out LL of an empty split".into()));
    }
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}

/// MI of the assignments with every observed variable, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub per_variable: Vec<(String, f64)>,
    pub average: f64,
}

/// Plug-in MI between `z` and each observed column of `ds`: categorical
/// features as coded, continuous features and the target quantile-binned.
/// Protected attributes and label columns are not observed variables.
pub fn mutual_information(assignments: &[usize], ds: &Dataset) -> Result<MiReport> {
    if assignments.len() != ds.len() {
        return Err(Error::dim("mutual_information", format!("{} assignments for {} rows", assignments.len(), ds.len())));
    }
    let mut per_variable = Vec::new();
    for c in &ds.categorical {
        per_variable.push((c.name.clone(), plugin_mi(assignments, &c.codes)?));
    }
    for c in &ds.continuous {
        per_variable.push((c.name.clone(), plugin_mi(assignments, &quantile_bins(&c.raw, MI_BINS))?));
    }
    if let Some(t) = &ds.target {
        per_variable.push((t.name.clone(), plugin_mi(assignments, &quantile_bins(&t.values, MI_BINS))?));
    }
    if per_variable.is_empty() {
        return Err(Error::Metric("mutual_information: dataset has no observed variables".into()));
    }
    let average = per_variable.iter().map(|(_, v)| v).sum::<f64>() / per_variable.len() as f64;
    Ok(MiReport { per_variable, average })
}
