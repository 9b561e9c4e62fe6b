//! Tabular ingestion, preprocessing (missing-row removal, one-hot encoding,
//! min-max normalization, +/-1 labels), partitioning across agents, and
//! synthetic fixtures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const DEFAULT_MISSING_MARKER: &str = "?";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("schema must declare exactly one label column, found {0}")]
    LabelCount(usize),
    #[error("CSV header {found:?} does not match schema columns {expected:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Arity { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: {value:?} is not a number")]
    NotNumeric { row: usize, column: String, value: String },
    #[error("label value {0:?} is not declared in the schema")]
    UnknownLabel(String),
    #[error("label column has {0} distinct values; declare the positive value in the schema")]
    NonBinaryLabel(usize),
    #[error("no rows left after removing rows with missing values")]
    EmptyAfterFiltering,
    #[error("{records} records cannot be split across {agents} agents")]
    TooFewRecords { records: usize, agents: usize },
    #[error("invalid synthetic parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Declared label values; the first one maps to +1. Empty means "infer
    /// from data", where the first observed value maps to +1.
    Label(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column descriptors, one `name:kind` per line; kind is `numeric`,
/// `categorical`, or `label[:pos,neg,...]`.
pub fn parse_schema(text: &str) -> Result<Vec<Column>, DatasetError> {
    let mut cols = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| DatasetError::Schema {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut parts = line.splitn(3, ':');
        let name = parts.next().unwrap_or("").trim();
        if name.is_empty() {
            return Err(err("empty column name"));
        }
        let kind = match parts.next().map(str::trim) {
            Some("numeric") => ColumnKind::Numeric,
            Some("categorical") => ColumnKind::Categorical,
            Some("label") => ColumnKind::Label(
                parts
                    .next()
                    .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
                    .unwrap_or_default(),
            ),
            Some(other) => return Err(err(&format!("unknown column kind {other:?}"))),
            None => return Err(err("expected name:kind")),
        };
        cols.push(Column {
            name: name.to_string(),
            kind,
        });
    }
    let labels = cols
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Label(_)))
        .count();
    if labels != 1 {
        return Err(DatasetError::LabelCount(labels));
    }
    Ok(cols)
}

#[derive(Debug, Clone)]
pub struct RawTable {
    pub schema: Vec<Column>,
    pub rows: Vec<Vec<String>>,
    pub missing_marker: String,
}

impl RawTable {
    pub fn new(schema: Vec<Column>, rows: Vec<Vec<String>>, missing_marker: &str) -> Result<Self, DatasetError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != schema.len() {
                return Err(DatasetError::Arity {
                    row: i + 1,
                    expected: schema.len(),
                    found: r.len(),
                });
            }
        }
        Ok(Self {
            schema,
            rows,
            missing_marker: missing_marker.to_string(),
        })
    }

    /// Comma-separated text with a header row matching the schema names.
    pub fn from_csv_reader<R: std::io::Read>(
        reader: R,
        schema: Vec<Column>,
        missing_marker: &str,
    ) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<String> = schema.iter().map(|c| c.name.clone()).collect();
        if header != expected {
            return Err(DatasetError::HeaderMismatch {
                expected,
                found: header,
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Self::new(schema, rows, missing_marker)
    }

    pub fn from_files(csv_path: &Path, schema_path: &Path, missing_marker: &str) -> Result<Self, DatasetError> {
        let schema = parse_schema(&std::fs::read_to_string(schema_path)?)?;
        let file = std::fs::File::open(csv_path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), schema, missing_marker)
    }
}

/// Row-major feature matrix with +/-1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    pub feature_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Self {
        assert_eq!(rows.len(), labels.len(), "features/labels length mismatch");
        let dim = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            assert_eq!(r.len(), dim, "ragged feature rows");
            features.extend_from_slice(r);
        }
        Self {
            features,
            labels,
            dim,
            feature_names: (0..dim).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Copy the listed records into a new matrix, in order.
    pub fn subset(&self, indices: &[usize]) -> DesignMatrix {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        DesignMatrix {
            features,
            labels,
            dim: self.dim,
            feature_names: self.feature_names.clone(),
        }
    }
}

pub fn preprocess(raw: &RawTable) -> Result<DesignMatrix, DatasetError> {
    let rows: Vec<&Vec<String>> = raw
        .rows
        .iter()
        .filter(|r| !r.iter().any(|v| v == &raw.missing_marker))
        .collect();
    if rows.is_empty() {
        return Err(DatasetError::EmptyAfterFiltering);
    }

    enum Encoder {
        Numeric { min: f64, max: f64 },
        OneHot(BTreeMap<String, usize>),
    }

    let mut label_col = None;
    let mut encoders = Vec::new();
    let mut names = Vec::new();
    let mut parsed_numeric: BTreeMap<usize, Vec<f64>> = BTreeMap::new();

    for (c, col) in raw.schema.iter().enumerate() {
        match &col.kind {
            ColumnKind::Label(_) => label_col = Some(c),
            ColumnKind::Numeric => {
                let mut vals = Vec::with_capacity(rows.len());
                for (r, row) in rows.iter().enumerate() {
                    let v = row[c].parse::<f64>().map_err(|_| DatasetError::NotNumeric {
                        row: r + 1,
                        column: col.name.clone(),
                        value: row[c].clone(),
                    })?;
                    vals.push(v);
                }
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                parsed_numeric.insert(c, vals);
                encoders.push((c, Encoder::Numeric { min, max }));
                names.push(col.name.clone());
            }
            ColumnKind::Categorical => {
                let cats: BTreeSet<&str> = rows.iter().map(|r| r[c].as_str()).collect();
                let map: BTreeMap<String, usize> = cats
                    .into_iter()
                    .enumerate()
                    .map(|(k, s)| (s.to_string(), k))
                    .collect();
                for cat in map.keys() {
                    names.push(format!("{}={}", col.name, cat));
                }
                encoders.push((c, Encoder::OneHot(map)));
            }
        }
    }
    let label_col = label_col.expect("schema validated to have one label");
    let positive = match &raw.schema[label_col].kind {
        ColumnKind::Label(declared) if !declared.is_empty() => {
            for row in &rows {
                if !declared.contains(&row[label_col]) {
                    return Err(DatasetError::UnknownLabel(row[label_col].clone()));
                }
            }
            declared[0].clone()
        }
        _ => {
            let distinct: BTreeSet<&str> = rows.iter().map(|r| r[label_col].as_str()).collect();
            if distinct.len() > 2 {
                return Err(DatasetError::NonBinaryLabel(distinct.len()));
            }
            rows[0][label_col].clone()
        }
    };

    let dim = names.len();
    let mut features = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        for (c, enc) in &encoders {
            match enc {
                Encoder::Numeric { min, max } => {
                    let v = parsed_numeric[c][r];
                    // constant column carries no information
                    features.push(if max > min { (v - min) / (max - min) } else { 0.0 });
                }
                Encoder::OneHot(map) => {
                    let hot = map[&row[*c]];
                    features.extend((0..map.len()).map(|k| if k == hot { 1.0 } else { 0.0 }));
                }
            }
        }
        labels.push(if row[label_col] == positive { 1.0 } else { -1.0 });
    }
    Ok(DesignMatrix {
        features,
        labels,
        dim,
        feature_names: names,
    })
}

/// Disjoint per-agent index sets covering a design matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shards {
    pub indices: Vec<Vec<usize>>,
}

impl Shards {
    pub fn sizes(&self) -> Vec<usize> {
        self.indices.iter().map(Vec::len).collect()
    }

    pub fn n_agents(&self) -> usize {
        self.indices.len()
    }
}

/// Seeded shuffle, then contiguous near-equal chunks. The first
/// `records % n_agents` shards get one extra record.
pub fn partition(n_records: usize, n_agents: usize, seed: u64) -> Result<Shards, DatasetError> {
    if n_agents == 0 || n_records < n_agents {
        return Err(DatasetError::TooFewRecords {
            records: n_records,
            agents: n_agents,
        });
    }
    let mut order: Vec<usize> = (0..n_records).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n_records / n_agents;
    let extra = n_records % n_agents;
    let mut indices = Vec::with_capacity(n_agents);
    let mut start = 0;
    for a in 0..n_agents {
        let len = base + usize::from(a < extra);
        indices.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(Shards { indices })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    /// Per-agent targets `c_i` for `f_i(x) = 0.5 * ||x - c_i||^2`.
    QuadraticConsensus { targets: Vec<Vec<f64>> },
    /// Two Gaussian classes with unit covariance whose means sit at
    /// `+/- separation / 2` along the all-ones direction.
    LogisticBlobs { n: usize, dim: usize, separation: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticData {
    Targets(Vec<Vec<f64>>),
    Design(DesignMatrix),
}

pub fn synthesize(kind: &SyntheticKind) -> Result<SyntheticData, DatasetError> {
    match kind {
        SyntheticKind::QuadraticConsensus { targets } => {
            let dim = targets.first().map_or(0, Vec::len);
            if targets.is_empty() || dim == 0 || targets.iter().any(|t| t.len() != dim) {
                return Err(DatasetError::InvalidParameter(
                    "targets must be nonempty vectors of equal length".into(),
                ));
            }
            Ok(SyntheticData::Targets(targets.clone()))
        }
        &SyntheticKind::LogisticBlobs {
            n,
            dim,
            separation,
            seed,
        } => {
            if n == 0 || dim == 0 || !separation.is_finite() || separation < 0.0 {
                return Err(DatasetError::InvalidParameter(format!(
                    "logistic_blobs(n={n}, d={dim}, separation={separation})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offset = separation / 2.0 / (dim as f64).sqrt();
            let mut rows = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let z = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let row: Vec<f64> = (0..dim)
                    .map(|_| z * offset + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                rows.push(row);
                labels.push(z);
            }
            Ok(SyntheticData::Design(DesignMatrix::new(rows, labels)))
        }
    }
}

/// Mean of quadratic targets: the minimizer of `sum_i 0.5 ||x - c_i||^2`.
pub fn quadratic_minimizer(targets: &[Vec<f64>]) -> Vec<f64> {
    let dim = targets.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for t in targets {
        crate::linalg::axpy(1.0 / targets.len() as f64, t, &mut mean);
    }
    mean
}
