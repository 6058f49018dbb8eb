use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Protected,
    Target,
}

/// Role of a column in the special-purpose model's DAG, or `label` for
/// columns kept only for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    M,
    F,
    P,
    D,
    A,
    C,
    T,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// `t = ln(1 + x)`, inverted with `exp(t) − 1`.
    Log1p,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Log1p => x.ln_1p(),
        }
    }

    pub fn invert(self, t: f64) -> f64 {
        match self {
            Transform::Log1p => t.exp_m1(),
        }
    }
}

/// One column of a dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Fixed category list. When absent it is learned from the train split
    /// in first-seen order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    /// Ascending cut points turning a numeric column into categories
    /// `[−∞, e₀), [e₀, e₁), …, [e_last, ∞)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind,
            vocabulary: None,
            bucket_edges: None,
            bucket_labels: None,
            role: None,
            transform: None,
        }
    }

    pub fn with_vocabulary(mut self, v: &[&str]) -> Self {
        self.vocabulary = Some(v.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }

    pub fn with_buckets(mut self, edges: &[f64], labels: &[&str]) -> Self {
        self.bucket_edges = Some(edges.to_vec());
        self.bucket_labels = Some(labels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_transform(mut self, t: Transform) -> Self {
        self.transform = Some(t);
        self
    }

    /// Categorical after bucketing.
    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical | ColumnKind::Protected)
    }

    /// Category label of a numeric value under this column's buckets.
    pub fn bucket(&self, x: f64) -> Option<String> {
        let edges = self.bucket_edges.as_ref()?;
        let i = edges.iter().take_while(|&&e| x >= e).count();
        Some(match &self.bucket_labels {
            Some(labels) => labels[i].clone(),
            None => default_bucket_label(edges, i),
        })
    }

    /// Every label the buckets can produce, in bucket order.
    pub fn bucket_vocabulary(&self) -> Option<Vec<String>> {
        let edges = self.bucket_edges.as_ref()?;
        Some(match &self.bucket_labels {
            Some(l) => l.clone(),
            None => (0..=edges.len()).map(|i| default_bucket_label(edges, i)).collect(),
        })
    }
}

fn default_bucket_label(edges: &[f64], i: usize) -> String {
    if i == 0 {
        format!("<{}", edges[0])
    } else if i == edges.len() {
        format!(">={}", edges[i - 1])
    } else {
        format!("{}-{}", edges[i - 1], edges[i])
    }
}

/// Column layout of a delimited dataset, stored as TOML with one
/// `[[column]]` table per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    #[serde(rename = "column")]
    pub columns: Vec<ColumnSpec>,
}

impl DatasetSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let s = DatasetSchema { columns };
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: DatasetSchema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.columns.iter().any(|c| c.kind == ColumnKind::Protected) {
            return Err(Error::Schema("at least one protected column is required".into()));
        }
        if self.columns.iter().filter(|c| c.kind == ColumnKind::Target).count() > 1 {
            return Err(Error::Schema("at most one target column".into()));
        }
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column {:?}", c.name)));
            }
            if let Some(edges) = &c.bucket_edges {
                if !c.is_discrete() {
                    return Err(Error::Schema(format!("{}: buckets only apply to categorical columns", c.name)));
                }
                if edges.is_empty() || edges.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Schema(format!("{}: bucket edges must be strictly ascending", c.name)));
                }
                if let Some(l) = &c.bucket_labels {
                    if l.len() != edges.len() + 1 {
                        return Err(Error::Schema(format!("{}: need {} bucket labels", c.name, edges.len() + 1)));
                    }
                }
            }
            if let Some(v) = &c.vocabulary {
                if v.is_empty() {
                    return Err(Error::Schema(format!("{}: empty vocabulary", c.name)));
                }
            }
            if c.transform.is_some() && c.kind == ColumnKind::Categorical {
                return Err(Error::Schema(format!("{}: transforms apply to numeric columns", c.name)));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn protected(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Protected)
    }
}
