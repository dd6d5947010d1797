//! Dataset ingestion: CSV loading, one-hot encoding, min-max scaling,
//! fold splitting and the default misclassification cost table.
//!
//! Scaling statistics and categorical levels are fit on an explicit row
//! subset (the training part of a fold) and then applied to all rows, so
//! cross-validation never leaks test statistics into the transform.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::CostMatrix;

/// Feature rows scaled to the unit box with contiguous 0-based class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            x,
            y,
            feature_names,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.x
            .row(i)
            .to_slice()
            .expect("feature matrix is row-major")
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.n() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                self.y.len(),
                self.n()
            )));
        }
        for &v in self.x.iter() {
            if !v.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return Err(Error::Data(format!("feature value {v} outside [0, 1]")));
            }
        }
        let k = self.k();
        if let Some(&bad) = self.y.iter().find(|&&y| y >= k) {
            return Err(Error::Data(format!("label index {bad} outside 0..{k}")));
        }
        Ok(())
    }

    /// Copies the given rows into a new dataset (class set unchanged).
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut x = Array2::zeros((rows.len(), self.p()));
        let mut y = Vec::with_capacity(rows.len());
        for (out, &i) in rows.iter().enumerate() {
            x.row_mut(out).assign(&self.x.row(i));
            y.push(self.y[i]);
        }
        Dataset {
            x,
            y,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// View of the dataset as a raw table (numeric columns plus the label
    /// column), used to re-enter the standard scaling pipeline.
    pub fn to_raw_table(&self) -> RawTable {
        let columns = (0..self.p())
            .map(|j| RawColumn::Numeric(self.x.column(j).to_vec()))
            .collect();
        RawTable {
            feature_names: self.feature_names.clone(),
            columns,
            labels: self.y.iter().map(|&y| self.class_names[y].clone()).collect(),
            label_name: "class".into(),
        }
    }
}

/// Which column of a CSV file holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Name(String),
}

/// Parsed but not yet encoded tabular data.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub columns: Vec<RawColumn>,
    pub labels: Vec<String>,
    pub label_name: String,
}

#[derive(Debug, Clone)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Loads a headered UTF-8 CSV file. Column types are inferred from the
/// first data row: a cell that parses as a finite number makes the column
/// numeric, anything else categorical. Later rows that contradict the
/// inferred type, ragged rows and empty cells are data errors carrying the
/// row and column location.
pub fn load_csv(path: &Path, label: &LabelColumn) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() || headers.iter().any(String::is_empty) {
        return Err(Error::Data(format!(
            "{}: missing or empty header row",
            path.display()
        )));
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(Error::Data(format!(
                "{}: duplicate column name {h:?}",
                path.display()
            )));
        }
    }

    let label_idx = match label {
        LabelColumn::Last => headers.len() - 1,
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("label column {name:?} not found in header")))?,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: row {}: {} fields, expected {}",
                path.display(),
                i + 1,
                record.len(),
                headers.len()
            )));
        }
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        for (col, field) in fields.iter().enumerate() {
            if field.is_empty() {
                return Err(Error::Data(format!(
                    "{}: missing value at row {}, column {:?}",
                    path.display(),
                    i + 1,
                    headers[col]
                )));
            }
        }
        rows.push(fields);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let parse_num = |s: &str| -> Option<f64> {
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    };

    let mut feature_names = Vec::new();
    let mut columns = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if col == label_idx {
            continue;
        }
        let numeric = parse_num(&rows[0][col]).is_some();
        if numeric {
            let mut values = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let v = parse_num(&row[col]).ok_or_else(|| {
                    Error::Data(format!(
                        "{}: unparsable numeric {:?} at row {}, column {:?}",
                        path.display(),
                        row[col],
                        i + 1,
                        name
                    ))
                })?;
                values.push(v);
            }
            columns.push(RawColumn::Numeric(values));
        } else {
            columns.push(RawColumn::Categorical(
                rows.iter().map(|r| r[col].clone()).collect(),
            ));
        }
        feature_names.push(name.clone());
    }

    Ok(RawTable {
        feature_names,
        columns,
        labels: rows.into_iter().map(|mut r| r.swap_remove(label_idx)).collect(),
        label_name: headers[label_idx].clone(),
    })
}

/// Loads a CSV file for prediction: every column is a feature and no label
/// is extracted (the per-row labels are empty placeholders). Columns that a
/// fitted transform does not mention — such as a label column that happens
/// to be present — are simply ignored when the transform is applied.
pub fn load_csv_unlabeled(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() || headers.iter().any(String::is_empty) {
        return Err(Error::Data(format!(
            "{}: missing or empty header row",
            path.display()
        )));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: row {}: {} fields, expected {}",
                path.display(),
                i + 1,
                record.len(),
                headers.len()
            )));
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let parse_num = |s: &str| -> Option<f64> { s.parse::<f64>().ok().filter(|v| v.is_finite()) };
    let mut columns = Vec::with_capacity(headers.len());
    for (col, name) in headers.iter().enumerate() {
        if parse_num(&rows[0][col]).is_some() {
            let mut values = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                values.push(parse_num(&row[col]).ok_or_else(|| {
                    Error::Data(format!(
                        "{}: unparsable numeric {:?} at row {}, column {:?}",
                        path.display(),
                        row[col],
                        i + 1,
                        name
                    ))
                })?);
            }
            columns.push(RawColumn::Numeric(values));
        } else {
            columns.push(RawColumn::Categorical(
                rows.iter().map(|r| r[col].clone()).collect(),
            ));
        }
    }

    Ok(RawTable {
        feature_names: headers,
        columns,
        labels: vec![String::new(); rows.len()],
        label_name: String::new(),
    })
}

/// Per-source-column piece of a fitted transform.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    /// `(x - min) / (max - min)` clamped to `[0, 1]`; constant columns
    /// (max == min) map to 0.
    MinMax { source: String, min: f64, max: f64 },
    /// One binary feature per level, in first-appearance order on the fit
    /// rows. Unseen levels encode as all zeros.
    OneHot { source: String, levels: Vec<String> },
}

/// Serializable record of a fitted encoding + scaling, reapplicable to
/// unseen rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Transform {
    pub columns: Vec<ColumnTransform>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub label_name: String,
}

impl Transform {
    /// Encodes the feature columns of `raw`, matching source columns by
    /// name. Missing columns are an error; unknown categorical levels
    /// encode as all zeros with a warning.
    pub fn apply(&self, raw: &RawTable) -> Result<Array2<f64>> {
        let n = raw.n_rows();
        let mut x = Array2::zeros((n, self.feature_names.len()));
        let mut out_col = 0usize;
        for spec in &self.columns {
            let source = match spec {
                ColumnTransform::MinMax { source, .. } => source,
                ColumnTransform::OneHot { source, .. } => source,
            };
            let idx = raw
                .feature_names
                .iter()
                .position(|h| h == source)
                .ok_or_else(|| Error::Data(format!("missing column {source:?} in input")))?;
            match (spec, &raw.columns[idx]) {
                (ColumnTransform::MinMax { min, max, .. }, RawColumn::Numeric(values)) => {
                    let range = max - min;
                    for (i, &v) in values.iter().enumerate() {
                        x[(i, out_col)] = if range > 0.0 {
                            ((v - min) / range).clamp(0.0, 1.0)
                        } else {
                            0.0
                        };
                    }
                    out_col += 1;
                }
                (ColumnTransform::OneHot { levels, .. }, RawColumn::Categorical(values)) => {
                    for (i, v) in values.iter().enumerate() {
                        match levels.iter().position(|l| l == v) {
                            Some(l) => x[(i, out_col + l)] = 1.0,
                            None => {
                                log::warn!(
                                    "unknown level {v:?} in column {source:?}; encoding as zeros"
                                );
                            }
                        }
                    }
                    out_col += levels.len();
                }
                _ => {
                    return Err(Error::Data(format!(
                        "column {source:?} has a different type than at fit time"
                    )));
                }
            }
        }
        Ok(x)
    }

    /// Maps label strings through the fitted class set.
    pub fn map_labels(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                self.class_names
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| {
                        Error::Data(format!("row {}: class {l:?} was not seen at fit time", i + 1))
                    })
            })
            .collect()
    }
}

/// Fits encoding + scaling statistics on `fit_rows` only and applies them
/// to every row of the table. Class labels are remapped to contiguous
/// indices in first-appearance order on the fit rows.
pub fn encode_and_scale(raw: &RawTable, fit_rows: &[usize]) -> Result<(Dataset, Transform)> {
    let n = raw.n_rows();
    if fit_rows.is_empty() {
        return Err(Error::Config("fit row set must be nonempty".into()));
    }
    if let Some(&bad) = fit_rows.iter().find(|&&r| r >= n) {
        return Err(Error::Config(format!("fit row {bad} out of range 0..{n}")));
    }

    let mut columns = Vec::new();
    let mut feature_names = Vec::new();
    for (name, col) in raw.feature_names.iter().zip(&raw.columns) {
        match col {
            RawColumn::Numeric(values) => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for &r in fit_rows {
                    min = min.min(values[r]);
                    max = max.max(values[r]);
                }
                if max <= min {
                    log::warn!("feature {name:?} is constant on the fit rows; scaled to 0");
                    max = min;
                }
                columns.push(ColumnTransform::MinMax {
                    source: name.clone(),
                    min,
                    max,
                });
                feature_names.push(name.clone());
            }
            RawColumn::Categorical(values) => {
                let mut levels: Vec<String> = Vec::new();
                for &r in fit_rows {
                    if !levels.contains(&values[r]) {
                        levels.push(values[r].clone());
                    }
                }
                for l in &levels {
                    feature_names.push(format!("{name}={l}"));
                }
                columns.push(ColumnTransform::OneHot {
                    source: name.clone(),
                    levels,
                });
            }
        }
    }

    // The class alphabet is an indexing convention shared by all folds, not
    // a fitted statistic; collect it over every row in appearance order.
    let mut class_names: Vec<String> = Vec::new();
    for label in &raw.labels {
        if !class_names.contains(label) {
            class_names.push(label.clone());
        }
    }

    let transform = Transform {
        columns,
        feature_names,
        class_names,
        label_name: raw.label_name.clone(),
    };
    let x = transform.apply(raw)?;
    let y = transform.map_labels(&raw.labels)?;
    let ds = Dataset::new(x, y, transform.feature_names.clone(), transform.class_names.clone())?;
    Ok((ds, transform))
}

/// Seeded partition of `0..n` into `k` disjoint index sets whose sizes
/// differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "fold count {k} must be between 1 and the sample count {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(perm[offset..offset + size].to_vec());
        offset += size;
    }
    Ok(folds)
}

/// The customary cost table: 0.5 for every misclassification, 0 on the
/// diagonal.
pub fn default_costs(k: usize) -> Result<CostMatrix> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    CostMatrix::uniform(k, 0.5)
}
