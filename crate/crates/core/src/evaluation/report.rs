use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{calinski_harabasz, davies_bouldin, regression_metrics};
use super::{heldout_ll, mutual_information, MiReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairness::{audit_metrics, AuditReport, DEFAULT_AUDIT_ALPHA};
use crate::models::{assign_hard, Inputs, Model, ModelKind};

/// A metric value or an explicit not-applicable marker (`"n/a"` in JSON
/// and CSV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Value(f64),
    NotApplicable,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(v),
            MetricValue::NotApplicable => None,
        }
    }

    fn cell(self) -> String {
        match self {
            MetricValue::Value(v) => v.to_string(),
            MetricValue::NotApplicable => "n/a".into(),
        }
    }
}

impl From<Option<f64>> for MetricValue {
    fn from(v: Option<f64>) -> Self {
        v.map_or(MetricValue::NotApplicable, MetricValue::Value)
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MetricValue::Value(v) => s.serialize_f64(*v),
            MetricValue::NotApplicable => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(MetricValue::Value(v)),
            Raw::Text(t) if t == "n/a" => Ok(MetricValue::NotApplicable),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"n/a\", got {t:?}"))),
        }
    }
}

/// Identifies what was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model_id: String,
    pub split: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Goodness-of-fit, clustering and jail-time metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    pub ll: MetricValue,
    pub mi: MetricValue,
    pub ch: MetricValue,
    /// True when CH is the zero-scatter sentinel.
    pub ch_degenerate: bool,
    pub db: MetricValue,
    pub mae: MetricValue,
    pub mse: MetricValue,
    pub r2: MetricValue,
    /// MI between `z` and each evaluation-only label column.
    pub mi_labels: Vec<(String, f64)>,
}

/// Mean predicted and observed raw target per intersectional group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTarget {
    pub group: String,
    pub count: usize,
    pub mean_predicted: f64,
    pub mean_observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub kind: ModelKind,
    pub num_classes: usize,
    pub num_rows: usize,
    pub predictive: PredictiveMetrics,
    pub mi_per_variable: Vec<(String, f64)>,
    /// Fairness of the hard `z` assignments.
    pub fairness: AuditReport,
    /// Fairness of the hard `u` assignments (SP only).
    pub fairness_u: Option<AuditReport>,
    /// Per-group jail time on the raw scale (SP only).
    pub group_targets: Option<Vec<GroupTarget>>,
    /// Why metrics were marked not-applicable.
    pub notes: Vec<String>,
}

fn metric_or_na<T>(r: Result<T>, name: &str, notes: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Metric(msg)) => {
            notes.push(format!("{name} n/a: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Evaluates a frozen model on one split.
pub fn assemble_report(model: &Model, ds: &Dataset, meta: ReportMeta) -> Result<EvalReport> {
    let x = model.inputs(ds)?;
    let k = model.k();
    let mut notes = Vec::new();
    let ll = heldout_ll(model, &x)?;
    let z = model.assign(&x)?;
    let MiReport { per_variable, average } = mutual_information(&z, ds)?;
    let mi_labels = ds
        .labels
        .iter()
        .map(|c| Ok((c.name.clone(), super::plugin_mi(&z, &c.codes)?)))
        .collect::<Result<Vec<_>>>()?;

    let points = x.features();
    let ch = metric_or_na(calinski_harabasz(points, &z, k), "ch", &mut notes)?;
    let db = metric_or_na(davies_bouldin(points, &z, k), "db", &mut notes)?;

    let (mut mae, mut mse, mut r2) = (None, None, None);
    let mut fairness_u = None;
    let mut group_targets = None;
    if let (Some(sp), Inputs::Sp(sx), Some(target)) = (model.as_sp(), &x, ds.target.as_ref()) {
        let predicted = model.predict_t(&x)?.expect("SP model predicts t");
        let reg = regression_metrics(&predicted, &target.values)?;
        mae = Some(reg.mae);
        mse = Some(reg.mse);
        r2 = reg.r2;
        if r2.is_none() {
            notes.push("r2 n/a: observed target has zero variance".into());
        }
        let u = assign_hard(&sp.u_posterior(model.store(), sx)?);
        fairness_u = Some(audit_metrics(&u, 2, &ds.group_ids, &ds.groups, DEFAULT_AUDIT_ALPHA)?);
        group_targets = Some(group_means(ds, &predicted, target));
    } else {
        notes.push(format!("mae, mse, r2 n/a: not defined for {} models", model.kind()));
    }
    let fairness = audit_metrics(&z, k, &ds.group_ids, &ds.groups, DEFAULT_AUDIT_ALPHA)?;

    Ok(EvalReport {
        meta,
        kind: model.kind(),
        num_classes: k,
        num_rows: ds.len(),
        predictive: PredictiveMetrics {
            ll: MetricValue::Value(ll),
            mi: MetricValue::Value(average),
            ch: ch.map(|c| c.value).into(),
            ch_degenerate: ch.is_some_and(|c| c.degenerate),
            db: db.into(),
            mae: mae.into(),
            mse: mse.into(),
            r2: r2.into(),
            mi_labels,
        },
        mi_per_variable: per_variable,
        fairness,
        fairness_u,
        group_targets,
        notes,
    })
}

fn group_means(ds: &Dataset, predicted: &[f64], target: &crate::data::TargetColumn) -> Vec<GroupTarget> {
    let g = ds.groups.num_groups();
    let mut sums = vec![(0usize, 0.0, 0.0); g];
    for ((&gid, &p), &obs) in ds.group_ids.iter().zip(predicted).zip(&target.raw) {
        let s = &mut sums[gid];
        s.0 += 1;
        s.1 += target.invert(p);
        s.2 += obs;
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(id, (count, p, o))| GroupTarget {
            group: ds.groups.group_label(id),
            count,
            mean_predicted: p / count as f64,
            mean_observed: o / count as f64,
        })
        .collect()
}

impl EvalReport {
    /// CSV columns: identification, then goodness of fit and clustering,
    /// then jail-time metrics, then fairness of `z` (and of `u` for SP).
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["model_id", "split", "seed", "config_hash", "kind", "ll", "mi", "ch", "db", "mae", "mse", "r2"]
            .map(String::from)
            .to_vec();
        h.extend(self.predictive.mi_labels.iter().map(|(n, _)| format!("mi_{n}")));
        audit_header(&mut h, "", &self.fairness);
        if let Some(u) = &self.fairness_u {
            audit_header(&mut h, "u_", u);
        }
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let p = &self.predictive;
        let mut r = vec![
            self.meta.model_id.clone(),
            self.meta.split.clone(),
            self.meta.seed.to_string(),
            self.meta.config_hash.clone(),
            self.kind.to_string(),
        ];
        r.extend([p.ll, p.mi, p.ch, p.db, p.mae, p.mse, p.r2].map(MetricValue::cell));
        r.extend(p.mi_labels.iter().map(|(_, v)| v.to_string()));
        audit_row(&mut r, &self.fairness);
        if let Some(u) = &self.fairness_u {
            audit_row(&mut r, u);
        }
        r
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::training::write_json(path, self)
    }
}

fn audit_header(h: &mut Vec<String>, prefix: &str, a: &AuditReport) {
    h.push(format!("{prefix}epsilon_df"));
    h.push(format!("{prefix}gamma_sf"));
    h.extend(a.attributes.iter().map(|at| format!("{prefix}delta_dp_{}", at.name)));
    h.extend(a.attributes.iter().map(|at| format!("{prefix}p_rule_{}", at.name)));
    h.push(format!("{prefix}overall_delta_dp"));
}

fn audit_row(r: &mut Vec<String>, a: &AuditReport) {
    r.push(a.epsilon_df.to_string());
    r.push(a.gamma_sf.to_string());
    r.extend(a.attributes.iter().map(|at| at.delta_dp.to_string()));
    r.extend(a.attributes.iter().map(|at| at.p_rule.to_string()));
    r.push(a.overall_delta_dp.to_string());
}

/// Writes one row per report; all reports must share a column layout.
pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let Some(first) = reports.first() else {
        return Err(Error::Contract("no reports to write".into()));
    };
    let header = first.csv_header();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(&header)?;
    for r in reports {
        if r.csv_header() != header {
            return Err(Error::Contract(format!("report {} has a different column layout", r.meta.model_id)));
        }
        w.write_record(r.csv_row())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `group,count,mean_predicted,mean_observed`.
pub fn write_group_targets_csv(path: impl AsRef<Path>, rows: &[GroupTarget]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        w.write_record(["group", "count", "mean_predicted", "mean_observed"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stable 64-bit FNV-1a hash of a value's JSON form, as 16 hex digits.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}
