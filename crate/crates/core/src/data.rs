//! Descriptor-table loading, cleaning, splitting, up-sampling, and scaling.
//!
//! Tables are dense `n x p` matrices of precomputed 2D-descriptor values with
//! an id per row, optional labels, and named feature columns. Non-numeric or
//! empty cells load as NaN; [`clean_features`] drops such columns from the
//! training view and the surviving projection is reapplied to CV/test tables.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use thiserror::Error;

use crate::seeding::{child_rng, Stream};

/// Whether labels are binary classes or real-valued targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Classification => write!(f, "classification"),
            TaskKind::Regression => write!(f, "regression"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {name:?} not found in header")]
    MissingColumn { name: String },
    #[error("duplicate feature column {name:?}")]
    DuplicateFeature { name: String },
    #[error("duplicate compound id {id:?}")]
    DuplicateCompound { id: String },
    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row}: label {value:?} is not a valid {task} label")]
    BadLabel {
        row: usize,
        value: String,
        task: TaskKind,
    },
    #[error("table has no rows")]
    EmptyTable,
    #[error("table has no feature columns")]
    NoFeatures,
    #[error("no usable feature columns survive cleaning")]
    NoUsableColumns,
    #[error("need at least {need} rows, got {n}")]
    TooFewRows { n: usize, need: usize },
    #[error("split fractions must be positive and sum to 1")]
    BadFractions,
    #[error("class {label} has {count} members, fewer than k = {k}")]
    ClassTooSmall { label: u8, count: usize, k: usize },
    #[error("operation requires a labelled classification table")]
    NotClassification,
    #[error("table contains a single class")]
    SingleClass,
    #[error("table is not labelled")]
    Unlabelled,
    #[error("dimension mismatch: scaler fitted on {expected} columns, table has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in column {column} of the scaler fit table")]
    NonFiniteInFit { column: usize },
}

/// Compounds-by-descriptors matrix with ids, column names, and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    pub compound_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub matrix: Array2<f64>,
    pub labels: Option<Vec<f64>>,
    pub task_kind: TaskKind,
}

impl DescriptorTable {
    /// Builds a table and checks the shape/label invariants.
    pub fn new(
        compound_ids: Vec<String>,
        feature_names: Vec<String>,
        matrix: Array2<f64>,
        labels: Option<Vec<f64>>,
        task_kind: TaskKind,
    ) -> Result<Self, DataError> {
        let n = matrix.nrows();
        if compound_ids.len() != n {
            return Err(DataError::RaggedRow {
                row: 0,
                expected: n,
                got: compound_ids.len(),
            });
        }
        if feature_names.len() != matrix.ncols() {
            return Err(DataError::NoFeatures);
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateFeature { name: name.clone() });
            }
        }
        let mut ids = std::collections::HashSet::new();
        for id in &compound_ids {
            if !ids.insert(id.as_str()) {
                return Err(DataError::DuplicateCompound { id: id.clone() });
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(DataError::RaggedRow {
                    row: 0,
                    expected: n,
                    got: labels.len(),
                });
            }
            if task_kind == TaskKind::Classification {
                for (row, &l) in labels.iter().enumerate() {
                    if l != 0.0 && l != 1.0 {
                        return Err(DataError::BadLabel {
                            row,
                            value: l.to_string(),
                            task: task_kind,
                        });
                    }
                }
            }
        }
        Ok(Self {
            compound_ids,
            feature_names,
            matrix,
            labels,
            task_kind,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    /// Labels or an error when the table is unlabelled.
    pub fn labels(&self) -> Result<&[f64], DataError> {
        self.labels.as_deref().ok_or(DataError::Unlabelled)
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DescriptorTable {
        let matrix = Array2::from_shape_fn((rows.len(), self.n_features()), |(i, j)| {
            self.matrix[(rows[i], j)]
        });
        DescriptorTable {
            compound_ids: rows.iter().map(|&r| self.compound_ids[r].clone()).collect(),
            feature_names: self.feature_names.clone(),
            matrix,
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            task_kind: self.task_kind,
        }
    }

    /// New table holding only the given columns, in the given order.
    pub fn project_columns(&self, kept: &[usize]) -> DescriptorTable {
        let matrix =
            Array2::from_shape_fn((self.n_rows(), kept.len()), |(i, j)| self.matrix[(i, kept[j])]);
        DescriptorTable {
            compound_ids: self.compound_ids.clone(),
            feature_names: kept.iter().map(|&j| self.feature_names[j].clone()).collect(),
            matrix,
            labels: self.labels.clone(),
            task_kind: self.task_kind,
        }
    }

    /// Column index of each requested name, erroring on the first miss.
    pub fn column_indices(&self, names: &[String]) -> Result<Vec<usize>, DataError> {
        let lookup: std::collections::HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        names
            .iter()
            .map(|name| {
                lookup
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| DataError::MissingColumn { name: name.clone() })
            })
            .collect()
    }

    /// Appends the rows of `other`; schemas must match exactly.
    pub fn concat_rows(&self, other: &DescriptorTable) -> Result<DescriptorTable, DataError> {
        if other.feature_names != self.feature_names {
            let name = other
                .feature_names
                .iter()
                .find(|n| !self.feature_names.contains(n))
                .cloned()
                .unwrap_or_else(|| "<column order>".to_string());
            return Err(DataError::MissingColumn { name });
        }
        let mut ids = self.compound_ids.clone();
        ids.extend(other.compound_ids.iter().cloned());
        let mut matrix = Array2::zeros((self.n_rows() + other.n_rows(), self.n_features()));
        matrix
            .slice_mut(ndarray::s![..self.n_rows(), ..])
            .assign(&self.matrix);
        matrix
            .slice_mut(ndarray::s![self.n_rows().., ..])
            .assign(&other.matrix);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => {
                let mut l = a.clone();
                l.extend_from_slice(b);
                Some(l)
            }
            (None, None) => None,
            _ => return Err(DataError::Unlabelled),
        };
        DescriptorTable::new(ids, self.feature_names.clone(), matrix, labels, self.task_kind)
    }
}

/// Per-column mean/std learnt from a training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// True where the population std fell below 1e-12.
    pub constant_mask: Vec<bool>,
}

/// Row-to-fold mapping produced by [`stratified_kfold`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_index: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// Row indices inside fold `fold`.
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        self.fold_index
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row indices outside fold `fold`.
    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        self.fold_index
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

fn parse_cell(raw: &str) -> f64 {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return f64::NAN;
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        // "NaN", "Inf", "-Inf" (any case) parse to non-finite floats; anything
        // unparseable is treated the same way.
        _ => f64::NAN,
    }
}

fn parse_label(raw: &str, row: usize, task: TaskKind) -> Result<f64, DataError> {
    let bad = || DataError::BadLabel {
        row,
        value: raw.to_string(),
        task,
    };
    let v: f64 = raw.trim().parse().map_err(|_| bad())?;
    match task {
        TaskKind::Classification if v == 0.0 || v == 1.0 => Ok(v),
        TaskKind::Classification => Err(bad()),
        TaskKind::Regression if v.is_finite() => Ok(v),
        TaskKind::Regression => Err(bad()),
    }
}

/// Picks tab as the delimiter when the header line is tab-separated,
/// otherwise comma.
fn sniff_delimiter(header_line: &str) -> u8 {
    let tabs = header_line.matches('\t').count();
    let commas = header_line.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Loads a delimited descriptor table.
///
/// All columns other than the id column and the optional label column become
/// features. Empty or unparseable numeric cells load as NaN so that
/// [`clean_features`] can drop them from training data.
pub fn load_table(
    path: &Path,
    id_column: &str,
    label_column: Option<&str>,
    task_kind: TaskKind,
) -> Result<DescriptorTable, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut contents = String::new();
    reader.read_to_string(&mut contents).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header_line = contents.lines().next().unwrap_or("");
    let delimiter = sniff_delimiter(header_line);

    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(contents.as_bytes());

    let headers: Vec<String> = csv_reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let id_idx = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| DataError::MissingColumn {
            name: id_column.to_string(),
        })?;
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            DataError::MissingColumn {
                name: name.to_string(),
            }
        })?),
        None => None,
    };

    let mut feature_cols = Vec::new();
    let mut feature_names = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        if idx == id_idx || Some(idx) == label_idx {
            continue;
        }
        feature_cols.push(idx);
        feature_names.push(name.clone());
    }
    if feature_names.is_empty() {
        return Err(DataError::NoFeatures);
    }

    let mut ids = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut values: Vec<f64> = Vec::new();
    for (row, record) in csv_reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => DataError::RaggedRow {
                row: row + 1,
                expected: *expected_len as usize,
                got: *len as usize,
            },
            _ => DataError::Csv(e),
        })?;
        ids.push(record[id_idx].trim().to_string());
        if let (Some(acc), Some(idx)) = (labels.as_mut(), label_idx) {
            acc.push(parse_label(&record[idx], row + 1, task_kind)?);
        }
        for &col in &feature_cols {
            values.push(parse_cell(&record[col]));
        }
    }
    if ids.is_empty() {
        return Err(DataError::EmptyTable);
    }

    let matrix = Array2::from_shape_vec((ids.len(), feature_names.len()), values)
        .expect("row-major cell buffer matches table shape");
    DescriptorTable::new(ids, feature_names, matrix, labels, task_kind)
}

/// Drops columns that are constant across the training rows or contain any
/// non-finite entry; returns the cleaned table plus the surviving column
/// indices so the same projection can be applied to CV/test tables.
pub fn clean_features(train: &DescriptorTable) -> Result<(DescriptorTable, Vec<usize>), DataError> {
    if train.n_rows() == 0 {
        return Err(DataError::EmptyTable);
    }
    let mut kept = Vec::new();
    for j in 0..train.n_features() {
        let col = train.matrix.column(j);
        let finite = col.iter().all(|v| v.is_finite());
        if !finite {
            continue;
        }
        let first = col[0];
        let constant = col.iter().all(|&v| v == first);
        if constant {
            continue;
        }
        kept.push(j);
    }
    if kept.is_empty() {
        return Err(DataError::NoUsableColumns);
    }
    Ok((train.project_columns(&kept), kept))
}

/// Random disjoint train/CV/test split with round-to-nearest sizing and the
/// remainder assigned to train.
pub fn split_random(
    table: &DescriptorTable,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(DescriptorTable, DescriptorTable, DescriptorTable), DataError> {
    let (f_train, f_cv, f_test) = fractions;
    if f_train <= 0.0 || f_cv <= 0.0 || f_test <= 0.0 {
        return Err(DataError::BadFractions);
    }
    if (f_train + f_cv + f_test - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions);
    }
    let n = table.n_rows();
    if n < 3 {
        return Err(DataError::TooFewRows { n, need: 3 });
    }
    let n_cv = (f_cv * n as f64).round() as usize;
    let n_test = (f_test * n as f64).round() as usize;
    if n_cv + n_test >= n {
        return Err(DataError::TooFewRows { n, need: n_cv + n_test + 1 });
    }
    let n_train = n - n_cv - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = child_rng(seed, Stream::Split, 0);
    order.shuffle(&mut rng);

    let train = table.select_rows(&order[..n_train]);
    let cv = table.select_rows(&order[n_train..n_train + n_cv]);
    let test = table.select_rows(&order[n_train + n_cv..]);
    Ok((train, cv, test))
}

/// Label-stratified k-fold assignment (random equal-size folds for
/// regression). Fold sizes differ by at most one and, for classification,
/// every class is dealt round-robin so per-fold class counts differ from the
/// even share by at most one compound.
pub fn stratified_kfold(
    table: &DescriptorTable,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, DataError> {
    let n = table.n_rows();
    if k < 2 || n < k {
        return Err(DataError::TooFewRows { n, need: k.max(2) });
    }
    let mut fold_index = vec![0usize; n];
    let mut rng = child_rng(seed, Stream::Fold, 0);
    match table.task_kind {
        TaskKind::Classification => {
            let labels = table.labels()?;
            let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, &l) in labels.iter().enumerate() {
                groups[l as usize].push(i);
            }
            for (class, group) in groups.iter().enumerate() {
                if !group.is_empty() && group.len() < k {
                    return Err(DataError::ClassTooSmall {
                        label: class as u8,
                        count: group.len(),
                        k,
                    });
                }
            }
            if groups[0].is_empty() || groups[1].is_empty() {
                return Err(DataError::SingleClass);
            }
            // Deal classes consecutively around the fold ring so totals stay
            // within one of each other.
            let mut start = 0usize;
            for group in groups.iter_mut() {
                group.shuffle(&mut rng);
                for (i, &row) in group.iter().enumerate() {
                    fold_index[row] = (start + i) % k;
                }
                start = (start + group.len()) % k;
            }
        }
        TaskKind::Regression => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (i, &row) in order.iter().enumerate() {
                fold_index[row] = i % k;
            }
        }
    }
    Ok(FoldAssignment { fold_index, k })
}

/// Balances a classification table by appending with-replacement copies of
/// minority rows until class counts are equal. Original rows (both classes)
/// are untouched; every appended row is an exact copy of an original
/// minority row.
pub fn upsample_minority(train: &DescriptorTable, seed: u64) -> Result<DescriptorTable, DataError> {
    if train.task_kind != TaskKind::Classification {
        return Err(DataError::NotClassification);
    }
    let labels = train.labels()?;
    let pos: Vec<usize> = (0..train.n_rows()).filter(|&i| labels[i] == 1.0).collect();
    let neg: Vec<usize> = (0..train.n_rows()).filter(|&i| labels[i] == 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(DataError::SingleClass);
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    if deficit == 0 {
        return Ok(train.clone());
    }
    let mut rng = child_rng(seed, Stream::Upsample, 0);
    let mut rows: Vec<usize> = (0..train.n_rows()).collect();
    for _ in 0..deficit {
        rows.push(minority[rng.gen_range(0..minority.len())]);
    }
    let mut table = train.select_rows(&rows);
    // Copies share the source compound id; resuffix so ids stay unique.
    for (copy, id) in table.compound_ids[train.n_rows()..].iter_mut().enumerate() {
        id.push_str(&format!("#up{copy}"));
    }
    Ok(table)
}

/// Fits per-column means and population (1/n) standard deviations.
pub fn zscore_fit(train: &DescriptorTable) -> Result<Scaler, DataError> {
    if train.n_rows() == 0 {
        return Err(DataError::EmptyTable);
    }
    let n = train.n_rows() as f64;
    let mut means = Vec::with_capacity(train.n_features());
    let mut stds = Vec::with_capacity(train.n_features());
    let mut constant_mask = Vec::with_capacity(train.n_features());
    for j in 0..train.n_features() {
        let col = train.matrix.column(j);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteInFit { column: j });
        }
        let mean = col.sum() / n;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        means.push(mean);
        stds.push(std);
        constant_mask.push(std < 1e-12);
    }
    Ok(Scaler {
        means,
        stds,
        constant_mask,
    })
}

/// Applies a fitted scaler: column j becomes `(x - mean_j) / std_j`.
/// Constant columns map to exactly 0, as do non-finite apply-time entries
/// (imputing them with the training mean).
pub fn zscore_apply(scaler: &Scaler, table: &DescriptorTable) -> Result<DescriptorTable, DataError> {
    if scaler.means.len() != table.n_features() {
        return Err(DataError::DimensionMismatch {
            expected: scaler.means.len(),
            got: table.n_features(),
        });
    }
    let mut out = table.clone();
    for j in 0..out.n_features() {
        let mean = scaler.means[j];
        let std = scaler.stds[j];
        let constant = scaler.constant_mask[j];
        for v in out.matrix.column_mut(j).iter_mut() {
            *v = if constant || !v.is_finite() {
                0.0
            } else {
                (*v - mean) / std
            };
        }
    }
    Ok(out)
}
