//! One-way clustered regression data, optionally grouped into superblocks.
//!
//! Clusters keep the order in which their ids first appear in the input and
//! rows keep file order within each cluster, so averages computed over a
//! dataset are reproducible bit for bit.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The observations of one cluster: an `N_g × k` design and its response.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let id = id.into();
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "cluster '{id}': design has {} rows but response has {}",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Self { id, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A validated collection of clusters with a common regressor count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    clusters: Vec<Cluster>,
    /// Superblock label per cluster, aligned with `clusters`.
    superblock_of: Option<Vec<String>>,
    k: usize,
}

/// Clusters of one superblock, as indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperblockGroup {
    pub label: String,
    pub members: Vec<usize>,
}

impl ClusteredDataset {
    pub fn new(clusters: Vec<Cluster>, superblock_of: Option<Vec<String>>) -> Result<Self> {
        let Some(first) = clusters.first() else {
            return Err(Error::EmptyInput("dataset has no clusters".into()));
        };
        let k = first.x.ncols();
        if k == 0 {
            return Err(Error::Schema("design has no regressor columns".into()));
        }
        for c in &clusters {
            if c.x.ncols() != k {
                return Err(Error::Shape(format!(
                    "cluster '{}' has {} regressors, expected {k}",
                    c.id,
                    c.x.ncols()
                )));
            }
            if c.x.nrows() != c.y.len() {
                return Err(Error::Shape(format!(
                    "cluster '{}': design has {} rows but response has {}",
                    c.id,
                    c.x.nrows(),
                    c.y.len()
                )));
            }
        }
        let mut seen = HashMap::with_capacity(clusters.len());
        for c in &clusters {
            if seen.insert(c.id.as_str(), ()).is_some() {
                return Err(Error::Input(format!("duplicate cluster id '{}'", c.id)));
            }
        }
        if let Some(labels) = &superblock_of {
            if labels.len() != clusters.len() {
                return Err(Error::Shape(format!(
                    "{} superblock labels for {} clusters",
                    labels.len(),
                    clusters.len()
                )));
            }
        }
        Ok(Self {
            clusters,
            superblock_of,
            k,
        })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Number of clusters `G`.
    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Number of regressors `k` (including any intercept column).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total_observations(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::len).collect()
    }

    pub fn superblock_labels(&self) -> Option<&[String]> {
        self.superblock_of.as_deref()
    }

    pub fn has_superblocks(&self) -> bool {
        self.superblock_of.is_some()
    }

    /// Superblocks in order of first appearance, each with its member clusters.
    pub fn superblocks(&self) -> Option<Vec<SuperblockGroup>> {
        let labels = self.superblock_of.as_ref()?;
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<SuperblockGroup> = Vec::new();
        for (g, label) in labels.iter().enumerate() {
            let slot = *index.entry(label.as_str()).or_insert_with(|| {
                groups.push(SuperblockGroup {
                    label: label.clone(),
                    members: Vec::new(),
                });
                groups.len() - 1
            });
            groups[slot].members.push(g);
        }
        Some(groups)
    }

    /// Number of distinct superblocks `D`, if a superblock map is present.
    pub fn num_superblocks(&self) -> Option<usize> {
        self.superblocks().map(|s| s.len())
    }

    /// Keeps clusters with at least `min_size` observations. Superblocks
    /// left without clusters disappear with them.
    pub fn filter_min_cluster_size(&self, min_size: usize) -> Result<Self> {
        if min_size == 0 {
            return Err(Error::Input(
                "minimum cluster size must be at least 1".into(),
            ));
        }
        let keep: Vec<usize> = (0..self.clusters.len())
            .filter(|&g| self.clusters[g].len() >= min_size)
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyResult { min_size });
        }
        let clusters = keep.iter().map(|&g| self.clusters[g].clone()).collect();
        let superblock_of = self
            .superblock_of
            .as_ref()
            .map(|labels| keep.iter().map(|&g| labels[g].clone()).collect());
        Self::new(clusters, superblock_of)
    }

    /// Reorders clusters (and their superblock labels) by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.clusters.len() {
            return Err(Error::Shape("permutation length differs from G".into()));
        }
        let clusters = order.iter().map(|&g| self.clusters[g].clone()).collect();
        let sb = self
            .superblock_of
            .as_ref()
            .map(|l| order.iter().map(|&g| l[g].clone()).collect());
        Self::new(clusters, sb)
    }

    /// Writes the dataset as CSV with columns
    /// `cluster,[superblock,]y,x1..xk` (or the names in `schema`).
    ///
    /// When `schema.intercept` is set the first design column is assumed to
    /// be the intercept and is not written.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &CsvSchema) -> Result<()> {
        let skip = usize::from(schema.intercept);
        if schema.x_cols.len() + skip != self.k {
            return Err(Error::Schema(format!(
                "schema names {} regressors but the dataset has {} (intercept: {})",
                schema.x_cols.len(),
                self.k,
                schema.intercept
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![schema.cluster_col.clone()];
        let with_sb = match (&schema.superblock_col, &self.superblock_of) {
            (Some(col), Some(_)) => {
                header.push(col.clone());
                true
            }
            _ => false,
        };
        header.push(schema.y_col.clone());
        header.extend(schema.x_cols.iter().cloned());
        w.write_record(&header)?;
        for (g, c) in self.clusters.iter().enumerate() {
            for i in 0..c.len() {
                let mut rec = vec![c.id.clone()];
                if with_sb {
                    rec.push(self.superblock_of.as_ref().unwrap()[g].clone());
                }
                rec.push(c.y[i].to_string());
                for j in skip..self.k {
                    rec.push(c.x[(i, j)].to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub cluster_col: String,
    pub superblock_col: Option<String>,
    pub y_col: String,
    pub x_cols: Vec<String>,
    /// Prepend a column of ones to the design.
    pub intercept: bool,
}

/// Rows of a CSV file grouped only by their identifying columns; numeric
/// columns are kept row-aligned and unprocessed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub cluster_ids: Vec<String>,
    pub superblocks: Option<Vec<String>>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl RawTable {
    pub fn num_rows(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Groups rows into clusters given a response and row-major design.
    pub fn group(&self, y: &[f64], x: &DMatrix<f64>) -> Result<ClusteredDataset> {
        let n = self.num_rows();
        if y.len() != n || x.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} rows but response has {} and design has {}",
                y.len(),
                x.nrows()
            )));
        }
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut ids: Vec<&str> = Vec::new();
        for (i, id) in self.cluster_ids.iter().enumerate() {
            let slot = *slot_of.entry(id.as_str()).or_insert_with(|| {
                rows.push(Vec::new());
                ids.push(id.as_str());
                rows.len() - 1
            });
            rows[slot].push(i);
        }
        let k = x.ncols();
        let mut clusters = Vec::with_capacity(rows.len());
        for (slot, members) in rows.iter().enumerate() {
            let xg = DMatrix::from_fn(members.len(), k, |r, c| x[(members[r], c)]);
            let yg = DVector::from_iterator(members.len(), members.iter().map(|&r| y[r]));
            clusters.push(Cluster::new(ids[slot], xg, yg)?);
        }
        let superblock_of = match &self.superblocks {
            None => None,
            Some(labels) => {
                let mut per_cluster: Vec<Option<&str>> = vec![None; rows.len()];
                for (i, id) in self.cluster_ids.iter().enumerate() {
                    let slot = slot_of[id.as_str()];
                    match per_cluster[slot] {
                        None => per_cluster[slot] = Some(labels[i].as_str()),
                        Some(prev) if prev != labels[i] => {
                            return Err(Error::SuperblockConflict {
                                cluster: id.clone(),
                                first: prev.to_string(),
                                second: labels[i].clone(),
                            })
                        }
                        Some(_) => {}
                    }
                }
                Some(
                    per_cluster
                        .into_iter()
                        .map(|l| l.unwrap_or_default().to_string())
                        .collect(),
                )
            }
        };
        ClusteredDataset::new(clusters, superblock_of)
    }
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
}

/// Reads a CSV with a header row, keeping the id columns as opaque strings
/// and parsing `numeric_cols` as finite reals.
pub fn read_table<R: Read>(
    reader: R,
    cluster_col: &str,
    superblock_col: Option<&str>,
    numeric_cols: &[String],
) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput("no header row".into()));
    }
    let cluster_idx = find_column(&headers, cluster_col)?;
    let sb_idx = superblock_col
        .map(|c| find_column(&headers, c))
        .transpose()?;
    let numeric_idx = numeric_cols
        .iter()
        .map(|c| find_column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut cluster_ids = Vec::new();
    let mut superblocks = sb_idx.map(|_| Vec::new());
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); numeric_cols.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };
        cluster_ids.push(field(cluster_idx, cluster_col)?.to_string());
        if let (Some(idx), Some(out)) = (sb_idx, superblocks.as_mut()) {
            out.push(field(idx, superblock_col.unwrap_or_default())?.to_string());
        }
        for (j, &idx) in numeric_idx.iter().enumerate() {
            let name = &numeric_cols[j];
            let raw = field(idx, name)?;
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("'{raw}' is not finite"),
                });
            }
            columns[j].push(value);
        }
    }
    if cluster_ids.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    Ok(RawTable {
        cluster_ids,
        superblocks,
        columns: numeric_cols.iter().cloned().zip(columns).collect(),
    })
}

/// Loads a clustered dataset from CSV according to `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ClusteredDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    if file.metadata()?.len() == 0 {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<ClusteredDataset> {
    if schema.x_cols.is_empty() && !schema.intercept {
        return Err(Error::Schema(
            "at least one regressor column is required".into(),
        ));
    }
    let mut numeric = vec![schema.y_col.clone()];
    numeric.extend(schema.x_cols.iter().cloned());
    let table = read_table(
        reader,
        &schema.cluster_col,
        schema.superblock_col.as_deref(),
        &numeric,
    )?;
    let n = table.num_rows();
    let offset = usize::from(schema.intercept);
    let k = schema.x_cols.len() + offset;
    let mut x = DMatrix::zeros(n, k);
    if schema.intercept {
        x.column_mut(0).fill(1.0);
    }
    for (j, (_, col)) in table.columns.iter().skip(1).enumerate() {
        for (i, v) in col.iter().enumerate() {
            x[(i, j + offset)] = *v;
        }
    }
    table.group(&table.columns[0].1, &x)
}

/// The five Engel-curve functional forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngelModel {
    /// food share on total expenditure
    LinearShare,
    /// food expenditure on total expenditure
    Linear,
    /// log food on log total
    DoubleLog,
    /// log food on total
    SemiLog,
    /// food share on log total
    WorkingLeser,
}

impl EngelModel {
    pub const ALL: [EngelModel; 5] = [
        EngelModel::LinearShare,
        EngelModel::Linear,
        EngelModel::DoubleLog,
        EngelModel::SemiLog,
        EngelModel::WorkingLeser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngelModel::LinearShare => "linear-share",
            EngelModel::Linear => "linear",
            EngelModel::DoubleLog => "double-log",
            EngelModel::SemiLog => "semi-log",
            EngelModel::WorkingLeser => "working-leser",
        }
    }

    /// 1-based position in the usual ordering of the five models.
    pub fn number(self) -> usize {
        EngelModel::ALL.iter().position(|&m| m == self).unwrap() + 1
    }
}

impl fmt::Display for EngelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EngelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        EngelModel::ALL
            .into_iter()
            .find(|m| m.name() == s || m.number().to_string() == s)
            .ok_or_else(|| {
                Error::Configuration(format!(
                    "unknown model '{s}' (expected one of linear-share, linear, double-log, semi-log, working-leser)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: EngelModel,
    pub include_hhsize: bool,
}

/// Household-level expenditure columns feeding [`apply_model_spec`].
#[derive(Debug, Clone, Copy)]
pub struct EngelColumns<'a> {
    pub food: &'a [f64],
    pub total: &'a [f64],
    pub hhsize: Option<&'a [f64]>,
}

/// Builds the response and design (intercept first) of an Engel model.
///
/// Row numbers in errors are 1-based.
pub fn apply_model_spec(
    raw: EngelColumns<'_>,
    spec: ModelSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = raw.food.len();
    if raw.total.len() != n {
        return Err(Error::Shape(
            "food and total columns differ in length".into(),
        ));
    }
    let hh = match (spec.include_hhsize, raw.hhsize) {
        (true, None) => {
            return Err(Error::Schema(
                "household size column required when include_hhsize is set".into(),
            ))
        }
        (true, Some(h)) if h.len() != n => {
            return Err(Error::Shape("hhsize column differs in length".into()))
        }
        (true, Some(h)) => Some(h),
        (false, _) => None,
    };
    let k = 2 + usize::from(hh.is_some());
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, k);
    let ln = |v: f64, what: &str, row: usize| -> Result<f64> {
        if v > 0.0 {
            Ok(v.ln())
        } else {
            Err(Error::Transform {
                row,
                message: format!("log of nonpositive {what} ({v})"),
            })
        }
    };
    for i in 0..n {
        let row = i + 1;
        let (food, total) = (raw.food[i], raw.total[i]);
        let share = || -> Result<f64> {
            if total > 0.0 {
                Ok(food / total)
            } else {
                Err(Error::Transform {
                    row,
                    message: format!("nonpositive total expenditure ({total}) in share"),
                })
            }
        };
        let (yi, xi) = match spec.model {
            EngelModel::LinearShare => (share()?, total),
            EngelModel::Linear => (food, total),
            EngelModel::DoubleLog => (ln(food, "food", row)?, ln(total, "total", row)?),
            EngelModel::SemiLog => (ln(food, "food", row)?, total),
            EngelModel::WorkingLeser => (share()?, ln(total, "total", row)?),
        };
        y[i] = yi;
        x[(i, 0)] = 1.0;
        x[(i, 1)] = xi;
        if let Some(h) = hh {
            x[(i, 2)] = h[i];
        }
    }
    Ok((y, x))
}

/// Column names for loading household data for the Engel models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngelSchema {
    pub cluster_col: String,
    pub superblock_col: Option<String>,
    pub food_col: String,
    pub total_col: String,
    pub hhsize_col: Option<String>,
}

/// Reads household rows once so several model specs can be applied.
pub fn read_engel_table(path: impl AsRef<Path>, schema: &EngelSchema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    if file.metadata()?.len() == 0 {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    let mut cols = vec![schema.food_col.clone(), schema.total_col.clone()];
    cols.extend(schema.hhsize_col.iter().cloned());
    read_table(
        file,
        &schema.cluster_col,
        schema.superblock_col.as_deref(),
        &cols,
    )
}

/// Applies an Engel model to a table produced by [`read_engel_table`].
pub fn engel_dataset(
    table: &RawTable,
    schema: &EngelSchema,
    spec: ModelSpec,
) -> Result<ClusteredDataset> {
    let food = table
        .column(&schema.food_col)
        .ok_or_else(|| Error::Schema(format!("missing column '{}'", schema.food_col)))?;
    let total = table
        .column(&schema.total_col)
        .ok_or_else(|| Error::Schema(format!("missing column '{}'", schema.total_col)))?;
    let hhsize = schema.hhsize_col.as_deref().and_then(|c| table.column(c));
    let (y, x) = apply_model_spec(
        EngelColumns {
            food,
            total,
            hhsize,
        },
        spec,
    )?;
    table.group(y.as_slice(), &x)
}
