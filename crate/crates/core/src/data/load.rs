use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, ColumnSpec, DatasetSchema, Role, Transform};
use crate::autodiff::Tensor;
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::fairness::GroupIndex;

/// Header plus string cells, exactly as read.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(Error::Data(format!("row {} has {} cells, header has {}", i + 1, rows[i].len(), header.len())));
        }
        Ok(RawTable { header, rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Self::new(header, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// One rejected cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub column: String,
    pub value: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    pub dropped_unparseable: usize,
    pub issues: Vec<RowIssue>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Cells {
    Discrete(Vec<String>),
    Numeric(Vec<f64>),
}

/// Rows that passed parsing, one typed vector per schema column.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    schema: DatasetSchema,
    cells: Vec<Cells>,
    n: usize,
}

impl ParsedTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }
}

fn parse_cell(spec: &ColumnSpec, raw: &str) -> std::result::Result<CellValue, String> {
    if spec.is_discrete() {
        if spec.bucket_edges.is_some() {
            let x: f64 = raw.parse().map_err(|_| "not a number".to_string())?;
            if !x.is_finite() {
                return Err("not finite".into());
            }
            Ok(CellValue::Discrete(spec.bucket(x).expect("bucketed column")))
        } else {
            Ok(CellValue::Discrete(raw.to_string()))
        }
    } else {
        let x: f64 = raw.parse().map_err(|_| "not a number".to_string())?;
        if !x.is_finite() {
            return Err("not finite".into());
        }
        if spec.transform == Some(Transform::Log1p) && x < 0.0 {
            return Err("negative value under log1p".into());
        }
        Ok(CellValue::Numeric(x))
    }
}

enum CellValue {
    Discrete(String),
    Numeric(f64),
}

const MAX_ISSUES: usize = 50;

/// Checks columns against the schema and parses every cell. Rows with an
/// empty required cell or an unparseable value are dropped and reported.
pub fn parse_table(raw: &RawTable, schema: &DatasetSchema) -> Result<(ParsedTable, LoadReport)> {
    let mut idx = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        match raw.column_index(&c.name) {
            Some(i) => idx.push(i),
            None => return Err(Error::Schema(format!("column {:?} missing from data", c.name))),
        }
    }
    let mut cells: Vec<Cells> = schema
        .columns
        .iter()
        .map(|c| if c.is_discrete() { Cells::Discrete(Vec::new()) } else { Cells::Numeric(Vec::new()) })
        .collect();
    let mut report = LoadReport { rows_read: raw.rows.len(), ..Default::default() };
    let mut parsed = Vec::with_capacity(schema.columns.len());
    'rows: for (r, row) in raw.rows.iter().enumerate() {
        parsed.clear();
        for (spec, &i) in schema.columns.iter().zip(&idx) {
            let v = row[i].trim();
            if v.is_empty() {
                report.dropped_missing += 1;
                continue 'rows;
            }
            match parse_cell(spec, v) {
                Ok(cell) => parsed.push(cell),
                Err(reason) => {
                    report.dropped_unparseable += 1;
                    if report.issues.len() < MAX_ISSUES {
                        report.issues.push(RowIssue { row: r + 1, column: spec.name.clone(), value: v.into(), reason });
                    }
                    continue 'rows;
                }
            }
        }
        for (dst, v) in cells.iter_mut().zip(parsed.drain(..)) {
            match (dst, v) {
                (Cells::Discrete(d), CellValue::Discrete(s)) => d.push(s),
                (Cells::Numeric(d), CellValue::Numeric(x)) => d.push(x),
                _ => unreachable!("cell type follows the schema"),
            }
        }
        report.rows_kept += 1;
    }
    if report.dropped_unparseable > report.issues.len() {
        report.warnings.push(format!("only the first {MAX_ISSUES} row issues are listed"));
    }
    if report.rows_kept == 0 {
        return Err(Error::Data(format!("no usable rows ({} read)", report.rows_read)));
    }
    Ok((ParsedTable { schema: schema.clone(), cells, n: report.rows_kept }, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub role: Option<Role>,
    pub vocabulary: Vec<String>,
    pub codes: Vec<usize>,
}

impl CategoricalColumn {
    pub fn cardinality(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn decode(&self, code: usize) -> &str {
        &self.vocabulary[code]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousColumn {
    pub name: String,
    pub role: Option<Role>,
    pub raw: Vec<f64>,
    /// Standardized with train-split statistics.
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetColumn {
    pub name: String,
    pub transform: Option<Transform>,
    /// Untransformed observations (e.g. jail days).
    pub raw: Vec<f64>,
    /// Transformed values the models regress on.
    pub values: Vec<f64>,
    /// Train-split moments of `values`, used to standardize network inputs.
    pub mean: f64,
    pub sd: f64,
}

impl TargetColumn {
    pub fn invert(&self, t: f64) -> f64 {
        self.transform.map_or(t, |tr| tr.invert(t))
    }
}

/// An encoded split ready for the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub categorical: Vec<CategoricalColumn>,
    pub continuous: Vec<ContinuousColumn>,
    pub target: Option<TargetColumn>,
    /// Evaluation-only categorical columns (role `label`).
    pub labels: Vec<CategoricalColumn>,
    pub group_ids: Vec<usize>,
    pub groups: GroupIndex,
    /// Raw protected values, one vector per attribute.
    pub protected: Vec<Vec<String>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.group_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_ids.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical.iter().map(CategoricalColumn::cardinality).collect()
    }

    /// One-hot block of all categorical feature columns, `n × Σ|vocab|`.
    pub fn onehot(&self) -> Tensor {
        self.onehot_of(&self.categorical.iter().collect::<Vec<_>>())
    }

    pub fn onehot_of(&self, cols: &[&CategoricalColumn]) -> Tensor {
        let n = self.len();
        let width: usize = cols.iter().map(|c| c.cardinality()).sum();
        let mut v = vec![0.0; n * width];
        let mut offset = 0;
        for c in cols {
            for (r, &code) in c.codes.iter().enumerate() {
                v[r * width + offset + code] = 1.0;
            }
            offset += c.cardinality();
        }
        Tensor::from_parts(vec![n, width.max(1)], if width == 0 { vec![0.0; n] } else { v })
    }

    /// Standardized continuous feature columns, `n × D`.
    pub fn continuous_matrix(&self) -> Tensor {
        self.continuous_matrix_of(&self.continuous.iter().collect::<Vec<_>>())
    }

    pub fn continuous_matrix_of(&self, cols: &[&ContinuousColumn]) -> Tensor {
        let n = self.len();
        let d = cols.len();
        let mut v = vec![0.0; n * d.max(1)];
        for (j, c) in cols.iter().enumerate() {
            for (r, &x) in c.values.iter().enumerate() {
                v[r * d + j] = x;
            }
        }
        Tensor::from_parts(vec![n, d.max(1)], v)
    }

    pub fn categorical_by_role(&self, role: Role) -> Option<&CategoricalColumn> {
        self.categorical.iter().find(|c| c.role == Some(role))
    }

    pub fn continuous_by_role(&self, role: Role) -> Option<&ContinuousColumn> {
        self.continuous.iter().find(|c| c.role == Some(role))
    }

    pub fn label(&self, name: &str) -> Option<&CategoricalColumn> {
        self.labels.iter().find(|c| c.name == name)
    }

    /// Rows `idx` of every column.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let cat = |c: &CategoricalColumn| CategoricalColumn {
            codes: idx.iter().map(|&i| c.codes[i]).collect(),
            ..c.clone()
        };
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            categorical: self.categorical.iter().map(cat).collect(),
            continuous: self
                .continuous
                .iter()
                .map(|c| ContinuousColumn { raw: pick(&c.raw), values: pick(&c.values), ..c.clone() })
                .collect(),
            target: self.target.as_ref().map(|t| TargetColumn { raw: pick(&t.raw), values: pick(&t.values), ..t.clone() }),
            labels: self.labels.iter().map(cat).collect(),
            group_ids: idx.iter().map(|&i| self.group_ids[i]).collect(),
            groups: self.groups.clone(),
            protected: self.protected.iter().map(|p| idx.iter().map(|&i| p[i].clone()).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    Vocabulary(Vec<String>),
    Moments { mean: f64, sd: f64 },
}

/// Encoding parameters fitted on the train split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    schema: DatasetSchema,
    fitted: Vec<Fitted>,
    warnings: Vec<String>,
}

fn moments(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Encoder {
    pub fn fit(table: &ParsedTable, train_rows: &[usize]) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(Error::Data("empty train split".into()));
        }
        let mut warnings = Vec::new();
        let mut fitted = Vec::with_capacity(table.cells.len());
        for (spec, cells) in table.schema.columns.iter().zip(&table.cells) {
            fitted.push(match cells {
                Cells::Discrete(vals) => {
                    let vocab = match (&spec.vocabulary, spec.bucket_vocabulary()) {
                        (Some(v), _) => v.clone(),
                        (None, Some(v)) => v,
                        (None, None) => {
                            let mut v: Vec<String> = Vec::new();
                            for &r in train_rows {
                                if !v.contains(&vals[r]) {
                                    v.push(vals[r].clone());
                                }
                            }
                            v
                        }
                    };
                    Fitted::Vocabulary(vocab)
                }
                Cells::Numeric(vals) => {
                    let transform = spec.transform;
                    let (mean, sd) = moments(train_rows.iter().map(|&r| transform.map_or(vals[r], |t| t.apply(vals[r]))));
                    let sd = if sd > 0.0 {
                        sd
                    } else {
                        warnings.push(format!("{}: zero variance on train split; left unscaled", spec.name));
                        1.0
                    };
                    Fitted::Moments { mean, sd }
                }
            });
        }
        Ok(Encoder { schema: table.schema.clone(), fitted, warnings })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn group_index(&self) -> Result<GroupIndex> {
        let mut names = Vec::new();
        let mut labels = Vec::new();
        for (spec, f) in self.schema.columns.iter().zip(&self.fitted) {
            if spec.kind == ColumnKind::Protected {
                if let Fitted::Vocabulary(v) = f {
                    names.push(spec.name.clone());
                    labels.push(v.clone());
                }
            }
        }
        GroupIndex::from_vocabularies(names, labels)
    }

    /// Encodes the given rows with the fitted parameters.
    pub fn transform(&self, table: &ParsedTable, rows: &[usize]) -> Result<Dataset> {
        if table.schema != self.schema {
            return Err(Error::Schema("table and encoder use different schemas".into()));
        }
        let groups = self.group_index()?;
        let mut ds = Dataset {
            categorical: Vec::new(),
            continuous: Vec::new(),
            target: None,
            labels: Vec::new(),
            group_ids: Vec::new(),
            groups,
            protected: Vec::new(),
        };
        let mut protected_codes: Vec<Vec<usize>> = Vec::new();
        for ((spec, f), cells) in self.schema.columns.iter().zip(&self.fitted).zip(&table.cells) {
            match (cells, f) {
                (Cells::Discrete(vals), Fitted::Vocabulary(vocab)) => {
                    let codes = rows
                        .iter()
                        .map(|&r| {
                            vocab.iter().position(|v| *v == vals[r]).ok_or_else(|| Error::UnknownCategory {
                                column: spec.name.clone(),
                                value: vals[r].clone(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let col = CategoricalColumn { name: spec.name.clone(), role: spec.role, vocabulary: vocab.clone(), codes };
                    match (spec.kind, spec.role) {
                        (ColumnKind::Protected, _) => {
                            ds.protected.push(rows.iter().map(|&r| vals[r].clone()).collect());
                            protected_codes.push(col.codes);
                        }
                        (_, Some(Role::Label)) => ds.labels.push(col),
                        _ => ds.categorical.push(col),
                    }
                }
                (Cells::Numeric(vals), &Fitted::Moments { mean, sd }) => {
                    let raw: Vec<f64> = rows.iter().map(|&r| vals[r]).collect();
                    if spec.kind == ColumnKind::Target {
                        let values: Vec<f64> = raw.iter().map(|&x| spec.transform.map_or(x, |t| t.apply(x))).collect();
                        ds.target = Some(TargetColumn {
                            name: spec.name.clone(),
                            transform: spec.transform,
                            raw,
                            values,
                            mean,
                            sd,
                        });
                    } else {
                        let values = raw.iter().map(|&x| (spec.transform.map_or(x, |t| t.apply(x)) - mean) / sd).collect();
                        ds.continuous.push(ContinuousColumn { name: spec.name.clone(), role: spec.role, raw, values, mean, sd });
                    }
                }
                _ => unreachable!("fitted parameters follow the column type"),
            }
        }
        ds.group_ids = (0..rows.len())
            .map(|i| {
                let codes: Vec<usize> = protected_codes.iter().map(|c| c[i]).collect();
                ds.groups.id_of_codes(&codes)
            })
            .collect();
        Ok(ds)
    }
}

/// How rows are assigned to train, dev and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SplitSpec {
    Fractions { train: f64, dev: f64, test: f64, seed: u64 },
    Files { train_file: String, dev_file: String, test_file: String },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions { train: 0.6, dev: 0.2, test: 0.2, seed: 0 }
    }
}

/// Deterministic shuffled split of `0..n` into train, dev and test rows.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    RngStream::new(seed).shuffle(&mut perm);
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_dev = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let test = perm.split_off(n_train + n_dev);
    let dev = perm.split_off(n_train);
    Ok([perm, dev, test])
}

/// Encoded train, dev and test splits with the encoder fitted on train.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub encoder: Encoder,
    pub report: LoadReport,
}

impl Splits {
    /// Splits a parsed table by fraction.
    pub fn from_table(table: &ParsedTable, fractions: [f64; 3], seed: u64, report: LoadReport) -> Result<Self> {
        let [train, dev, test] = split_indices(table.len(), fractions, seed)?;
        Self::from_rows(table, &train, &dev, &test, report)
    }

    pub fn from_rows(table: &ParsedTable, train: &[usize], dev: &[usize], test: &[usize], mut report: LoadReport) -> Result<Self> {
        let encoder = Encoder::fit(table, train)?;
        report.warnings.extend(encoder.warnings().iter().cloned());
        Ok(Splits {
            train: encoder.transform(table, train)?,
            dev: encoder.transform(table, dev)?,
            test: encoder.transform(table, test)?,
            encoder,
            report,
        })
    }
}

/// Reads, parses, splits and encodes a dataset. With file-based splits the
/// three files are parsed independently and concatenated in order.
pub fn load_dataset(path: Option<&Path>, schema: &DatasetSchema, spec: &SplitSpec) -> Result<Splits> {
    match spec {
        SplitSpec::Fractions { train, dev, test, seed } => {
            let path = path.ok_or_else(|| Error::Config("dataset path is required".into()))?;
            let raw = RawTable::read_csv(path)?;
            let (table, report) = parse_table(&raw, schema)?;
            Splits::from_table(&table, [*train, *dev, *test], *seed, report)
        }
        SplitSpec::Files { train_file, dev_file, test_file } => {
            let mut raws = Vec::with_capacity(3);
            for f in [train_file, dev_file, test_file] {
                raws.push(RawTable::read_csv(f)?);
            }
            let sizes: Vec<usize> = raws.iter().map(|r| r.rows.len()).collect();
            let mut merged = raws[0].clone();
            for r in &raws[1..] {
                if r.header != merged.header {
                    return Err(Error::Data("split files have different headers".into()));
                }
                merged.rows.extend(r.rows.iter().cloned());
            }
            let (table, report) = parse_table(&merged, schema)?;
            if report.rows_kept != merged.rows.len() {
                return Err(Error::Data("file-based splits require complete rows".into()));
            }
            let train: Vec<usize> = (0..sizes[0]).collect();
            let dev: Vec<usize> = (sizes[0]..sizes[0] + sizes[1]).collect();
            let test: Vec<usize> = (sizes[0] + sizes[1]..table.len()).collect();
            Splits::from_rows(&table, &train, &dev, &test, report)
        }
    }
}
