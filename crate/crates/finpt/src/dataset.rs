//! Loading, validation, and splitting of risk-table datasets.
//!
//! A dataset directory holds `meta.json` (column schema), `data.csv`
//! (feature columns plus a final `y` label column), and optionally
//! `splits.json` (train/val/test row indices). Loaded datasets are
//! immutable except for split assignment and are safe to share across
//! readers.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Column kind plus, for categorical columns, the closed set of categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical { categories: Vec<String> },
}

/// One column of the table schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Numeric }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Categorical { categories } }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    /// Number of categories; zero for numeric columns.
    pub fn cat_dim(&self) -> usize {
        match &self.kind {
            ColumnKind::Numeric => 0,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }
}

/// A single table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Numeric(f64),
    Categorical(String),
}

impl fmt::Display for Value {
    /// Renders the cell the way it appears in instruction text. Integral
    /// numerics print without a decimal part ("Age: 32", not "Age: 32.0");
    /// Rust's shortest-roundtrip float formatting already does this.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Numeric(v) => write!(f, "{v}"),
            Value::Categorical(s) => f.write_str(s),
        }
    }
}

/// Split membership of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Label counts over a label sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub total: usize,
    pub positives: usize,
    pub pos_ratio: f64,
}

/// Exact positive/total counts. Errors on an empty sequence.
pub fn class_stats(labels: &[u8]) -> Result<ClassStats> {
    if labels.is_empty() {
        return Err(Error::Validation("class_stats: empty label sequence".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    Ok(ClassStats {
        total: labels.len(),
        positives,
        pos_ratio: positives as f64 / labels.len() as f64,
    })
}

/// Split sizes for `m` rows: the test set takes round(0.30·m), then the
/// remainder divides train:val = 9:1 with round-half-up on the val count.
/// Integer arithmetic so the rounding is exact.
pub fn split_sizes(m: usize) -> (usize, usize, usize) {
    let test = (3 * m + 5) / 10;
    let rest = m - test;
    let val = (rest + 5) / 10;
    let train = rest - val;
    (train, val, test)
}

/// One binary-risk table: schema, value grid, labels, and (optionally
/// assigned) split membership per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub id: String,
    pub columns: Vec<ColumnSchema>,
    pub rows: Vec<Vec<Value>>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    /// `None` until assigned by `assign_splits` or loaded from splits.json.
    pub splits: Vec<Option<Split>>,
}

/// meta.json layout. Field names are part of the on-disk format.
#[derive(Serialize, Deserialize)]
struct MetaFile {
    num_classes: usize,
    num_features: usize,
    col_name: Vec<String>,
    num_idx: Vec<usize>,
    cat_idx: Vec<usize>,
    cat_dim: Vec<usize>,
    cat_str: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize, Default)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl TabularDataset {
    /// Builds and validates a dataset from in-memory parts. Splits start
    /// unassigned.
    pub fn new(
        id: impl Into<String>,
        columns: Vec<ColumnSchema>,
        rows: Vec<Vec<Value>>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let splits = vec![None; rows.len()];
        let ds = Self { id: id.into(), columns, rows, labels, num_classes: 2, splits };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Validation(format!("dataset {}: no data rows", self.id)));
        }
        if self.labels.len() != self.rows.len() {
            return Err(Error::Validation(format!(
                "dataset {}: {} labels for {} rows",
                self.id,
                self.labels.len(),
                self.rows.len()
            )));
        }
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {:?}", col.name)));
            }
            if let ColumnKind::Categorical { categories } = &col.kind {
                if categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "categorical column {:?} has no categories",
                        col.name
                    )));
                }
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(Error::Validation(format!(
                    "row {i}: {} cells for {} columns",
                    row.len(),
                    self.columns.len()
                )));
            }
            for (col, cell) in self.columns.iter().zip(row) {
                match (&col.kind, cell) {
                    (ColumnKind::Numeric, Value::Numeric(v)) => {
                        if !v.is_finite() {
                            return Err(Error::Validation(format!(
                                "row {i}, column {:?}: non-finite numeric value",
                                col.name
                            )));
                        }
                    }
                    (ColumnKind::Categorical { categories }, Value::Categorical(s)) => {
                        if !categories.contains(s) {
                            return Err(Error::Validation(format!(
                                "row {i}, column {:?}: value {s:?} not in category list",
                                col.name
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Validation(format!(
                            "row {i}, column {:?}: cell kind does not match schema",
                            col.name
                        )));
                    }
                }
            }
            if self.labels[i] > 1 {
                return Err(Error::Validation(format!(
                    "row {i}: label {} outside {{0,1}}",
                    self.labels[i]
                )));
            }
        }
        Ok(())
    }

    /// Loads and validates a dataset directory. The dataset id is the
    /// directory name.
    pub fn load(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());

        let meta_path = dir.join("meta.json");
        let meta_text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::Load { path: meta_path.clone(), reason: e.to_string() })?;
        let meta: MetaFile = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Schema(format!("{}: {e}", meta_path.display())))?;
        let columns = columns_from_meta(&meta)?;

        let csv_path = dir.join("data.csv");
        let csv_text = fs::read_to_string(&csv_path)
            .map_err(|e| Error::Load { path: csv_path.clone(), reason: e.to_string() })?;
        let (rows, labels) = parse_data_csv(&csv_text, &columns)?;

        let mut ds = Self::new(id, columns, rows, labels)?;

        let splits_path = dir.join("splits.json");
        if splits_path.exists() {
            let text = fs::read_to_string(&splits_path)
                .map_err(|e| Error::Load { path: splits_path.clone(), reason: e.to_string() })?;
            let file: SplitsFile = serde_json::from_str(&text)
                .map_err(|e| Error::Schema(format!("{}: {e}", splits_path.display())))?;
            ds.apply_split_file(&file)?;
        }
        Ok(ds)
    }

    /// Writes `meta.json`, `data.csv`, and (when any split is assigned)
    /// `splits.json` so that `load` reproduces this dataset exactly.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = self.meta_file();
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.columns.iter().map(|c| c.name.clone()).collect();
        header.push("y".to_string());
        wtr.write_record(&header)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            wtr.write_record(&rec)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        fs::write(dir.join("data.csv"), bytes)?;

        if self.splits.iter().any(|s| s.is_some()) {
            let mut file = SplitsFile::default();
            for (i, s) in self.splits.iter().enumerate() {
                match s {
                    Some(Split::Train) => file.train.push(i),
                    Some(Split::Val) => file.val.push(i),
                    Some(Split::Test) => file.test.push(i),
                    None => {}
                }
            }
            fs::write(dir.join("splits.json"), serde_json::to_string_pretty(&file)?)?;
        }
        Ok(())
    }

    fn meta_file(&self) -> MetaFile {
        let mut num_idx = Vec::new();
        let mut cat_idx = Vec::new();
        let mut cat_dim = Vec::new();
        let mut cat_str = Vec::new();
        for (i, col) in self.columns.iter().enumerate() {
            match &col.kind {
                ColumnKind::Numeric => num_idx.push(i),
                ColumnKind::Categorical { categories } => {
                    cat_idx.push(i);
                    cat_dim.push(categories.len());
                    cat_str.push(categories.clone());
                }
            }
        }
        MetaFile {
            num_classes: self.num_classes,
            num_features: self.columns.len(),
            col_name: self.columns.iter().map(|c| c.name.clone()).collect(),
            num_idx,
            cat_idx,
            cat_dim,
            cat_str,
        }
    }

    fn apply_split_file(&mut self, file: &SplitsFile) -> Result<()> {
        let m = self.num_rows();
        let mut seen = HashSet::new();
        let groups = [
            (Split::Train, &file.train),
            (Split::Val, &file.val),
            (Split::Test, &file.test),
        ];
        for (split, indices) in groups {
            for &i in indices.iter() {
                if i >= m {
                    return Err(Error::Validation(format!(
                        "splits.json: row index {i} out of range for {m} rows"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Validation(format!(
                        "splits.json: row {i} assigned to more than one split"
                    )));
                }
                self.splits[i] = Some(split);
            }
        }
        Ok(())
    }

    /// Assigns every row to train/val/test with a seed-deterministic
    /// uniform shuffle, replacing any prior assignment.
    pub fn assign_splits(&mut self, seed: u64) -> Result<()> {
        let m = self.num_rows();
        if m < 10 {
            return Err(Error::TooFewRows(m));
        }
        let (n_train, n_val, n_test) = split_sizes(m);
        let mut order: Vec<usize> = (0..m).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);

        for (pos, &row) in order.iter().enumerate() {
            self.splits[row] = Some(if pos < n_test {
                Split::Test
            } else if pos < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            });
        }
        debug_assert_eq!(n_train + n_val + n_test, m);
        Ok(())
    }

    /// Row indices belonging to `split`, in ascending order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (*s == Some(split)).then_some(i))
            .collect()
    }

    pub fn labels_for(&self, split: Split) -> Vec<u8> {
        self.split_indices(split).iter().map(|&i| self.labels[i]).collect()
    }
}

fn columns_from_meta(meta: &MetaFile) -> Result<Vec<ColumnSchema>> {
    if meta.num_classes != 2 {
        return Err(Error::Schema(format!(
            "num_classes is {}, this pipeline handles binary labels only",
            meta.num_classes
        )));
    }
    let n = meta.num_features;
    if meta.col_name.len() != n {
        return Err(Error::Schema(format!(
            "col_name lists {} names but num_features is {n}",
            meta.col_name.len()
        )));
    }
    if meta.cat_idx.len() != meta.cat_dim.len() || meta.cat_idx.len() != meta.cat_str.len() {
        return Err(Error::Schema(
            "cat_idx, cat_dim, and cat_str must have equal lengths".into(),
        ));
    }
    let mut kinds: Vec<Option<ColumnKind>> = vec![None; n];
    for &i in &meta.num_idx {
        if i >= n {
            return Err(Error::Schema(format!("num_idx {i} out of range for {n} columns")));
        }
        kinds[i] = Some(ColumnKind::Numeric);
    }
    for (pos, &i) in meta.cat_idx.iter().enumerate() {
        if i >= n {
            return Err(Error::Schema(format!("cat_idx {i} out of range for {n} columns")));
        }
        if kinds[i].is_some() {
            return Err(Error::Schema(format!("column {i} listed as both numeric and categorical")));
        }
        let categories = meta.cat_str[pos].clone();
        if categories.len() != meta.cat_dim[pos] {
            return Err(Error::Schema(format!(
                "column {i}: cat_dim {} disagrees with {} category strings",
                meta.cat_dim[pos],
                categories.len()
            )));
        }
        kinds[i] = Some(ColumnKind::Categorical { categories });
    }
    let mut columns = Vec::with_capacity(n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let kind = kind.ok_or_else(|| {
            Error::Schema(format!("column {i} appears in neither num_idx nor cat_idx"))
        })?;
        columns.push(ColumnSchema { name: meta.col_name[i].clone(), kind });
    }
    Ok(columns)
}

fn parse_data_csv(text: &str, columns: &[ColumnSchema]) -> Result<(Vec<Vec<Value>>, Vec<u8>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = columns
        .iter()
        .map(|c| c.name.as_str())
        .chain(std::iter::once("y"))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!(
            "data.csv header {:?} does not match meta.json columns plus final \"y\"",
            header.iter().collect::<Vec<_>>()
        )));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != columns.len() + 1 {
            return Err(Error::Validation(format!(
                "data row {line}: {} fields, expected {}",
                record.len(),
                columns.len() + 1
            )));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (col, cell) in columns.iter().zip(record.iter()) {
            if cell.is_empty() {
                return Err(Error::Validation(format!(
                    "data row {line}, column {:?}: missing value",
                    col.name
                )));
            }
            let value = match &col.kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell.trim().parse().map_err(|_| {
                        Error::Validation(format!(
                            "data row {line}, column {:?}: {cell:?} is not numeric",
                            col.name
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "data row {line}, column {:?}: non-finite value",
                            col.name
                        )));
                    }
                    Value::Numeric(v)
                }
                ColumnKind::Categorical { .. } => Value::Categorical(cell.to_string()),
            };
            row.push(value);
        }
        let label_cell = &record[columns.len()];
        let label: u8 = match label_cell.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Validation(format!(
                    "data row {line}: label {other:?} outside {{0,1}}"
                )))
            }
        };
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Validation("data.csv has a header but no rows".into()));
    }
    Ok((rows, labels))
}
