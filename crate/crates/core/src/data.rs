//! Tabular datasets, seeded splits and batches, and the Friedman #1 generator.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: target column `{column}` not found in header")]
    MissingTarget { path: PathBuf, column: String },
    #[error("{path}: row {row}, column `{column}`: non-numeric cell `{value}`")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}, column `{column}`: non-finite value")]
    NonFinite { path: PathBuf, row: usize, column: String },
    #[error("{0}: dataset has no rows")]
    Empty(PathBuf),
    #[error("dataset shape mismatch: {rows} feature rows, {targets} targets, {columns} columns, {names} names")]
    Shape {
        rows: usize,
        targets: usize,
        columns: usize,
        names: usize,
    },
    #[error("dataset contains non-finite values")]
    NotFinite,
    #[error("split fraction {0} is outside (0, 1)")]
    Fraction(f64),
    #[error("need at least 2 samples to split, got {0}")]
    TooSmall(usize),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("synthetic dataset needs at least {min} {what}, got {got}")]
    Synthetic { what: &'static str, min: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Samples in rows, features in columns. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    targets: DVector<f64>,
    feature_names: Vec<String>,
    name: String,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>, feature_names: Vec<String>) -> Result<Self> {
        if features.nrows() != targets.len() || features.ncols() != feature_names.len() {
            return Err(DataError::Shape {
                rows: features.nrows(),
                targets: targets.len(),
                columns: features.ncols(),
                names: feature_names.len(),
            });
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::NotFinite);
        }
        Ok(Self {
            features,
            targets,
            feature_names,
            name: "dataset".to_string(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Identity string used in logs: name plus row/column counts.
    pub fn identity(&self) -> String {
        format!("{} [{}x{}]", self.name, self.n_samples(), self.n_features())
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            targets: self.targets.select_rows(rows),
            feature_names: self.feature_names.clone(),
            name: self.name.clone(),
        }
    }
}

/// Two disjoint row subsets of a source dataset covering all of its rows.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub first: Dataset,
    pub second: Dataset,
    /// Source row indices of `first` and `second`, in order.
    pub first_rows: Vec<usize>,
    pub second_rows: Vec<usize>,
    pub seed: u64,
}

/// Reads a comma-separated file with a header row. `target_column` is removed
/// from the features and becomes the target vector.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |e: csv::Error| DataError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget {
            path: path.to_path_buf(),
            column: target_column.to_string(),
        })?;

    let mut values = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // header is line 1
        let row = i + 2;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                path: path.to_path_buf(),
                row,
                column: header[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    path: path.to_path_buf(),
                    row,
                    column: header[j].clone(),
                });
            }
            if j == target_idx {
                targets.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let features = DMatrix::from_row_slice(targets.len(), names.len(), &values);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(Dataset::new(features, DVector::from_vec(targets), names)?.with_name(stem))
}

/// Number of rows given to the second partition: round-half-up of
/// `fraction * d`, kept within `[1, d - 1]`.
fn second_size(d: usize, fraction: f64) -> usize {
    let raw = (fraction * d as f64 + 0.5).floor() as usize;
    raw.clamp(1, d - 1)
}

/// Seeded uniform shuffle, then the last `round(test_fraction * d)` rows of the
/// permutation form `second`.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Fraction(test_fraction));
    }
    let d = ds.n_samples();
    if d < 2 {
        return Err(DataError::TooSmall(d));
    }
    let mut rng = rng::seeded(seed);
    let perm = index::sample(&mut rng, d, d).into_vec();
    let n_second = second_size(d, test_fraction);
    let (first_rows, second_rows) = perm.split_at(d - n_second);
    Ok(SplitPair {
        first: ds.select_rows(first_rows),
        second: ds.select_rows(second_rows),
        first_rows: first_rows.to_vec(),
        second_rows: second_rows.to_vec(),
        seed,
    })
}

/// Splits training data into a fit partition (`first`) and a validation
/// partition (`second`).
pub fn validation_split(train: &Dataset, fraction: f64, seed: u64) -> Result<SplitPair> {
    train_test_split(train, fraction, seed)
}

/// `min(batch_size, d)` rows drawn without replacement.
pub fn make_batch(fit: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<Dataset> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatch);
    }
    let d = fit.n_samples();
    let rows = index::sample(rng, d, batch_size.min(d)).into_vec();
    Ok(fit.select_rows(&rows))
}

/// The noise-free Friedman #1 response for one row (uses the first 5 columns).
pub fn friedman1_response(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Friedman #1 with 10 uniform features, 5 of them informative.
pub fn synth_friedman1(n_samples: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    synth_friedman1_with_features(n_samples, 10, noise_sd, seed)
}

/// Friedman #1 with `n_features >= 5` uniform features; columns beyond the
/// fifth are uninformative.
pub fn synth_friedman1_with_features(n_samples: usize, n_features: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n_samples < 1 {
        return Err(DataError::Synthetic {
            what: "samples",
            min: 1,
            got: n_samples,
        });
    }
    if n_features < 5 {
        return Err(DataError::Synthetic {
            what: "features",
            min: 5,
            got: n_features,
        });
    }
    let noise = Normal::new(0.0, noise_sd.max(0.0)).map_err(|_| DataError::NotFinite)?;
    let mut rng = rng::seeded(seed);
    let mut values = Vec::with_capacity(n_samples * n_features);
    let mut targets = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let row: Vec<f64> = (0..n_features).map(|_| rng.random::<f64>()).collect();
        let mut y = friedman1_response(&row);
        if noise_sd > 0.0 {
            y += noise.sample(&mut rng);
        }
        values.extend_from_slice(&row);
        targets.push(y);
    }
    let names = (0..n_features).map(|j| format!("x{}", j + 1)).collect();
    let features = DMatrix::from_row_slice(n_samples, n_features, &values);
    let name = format!("friedman1(n={n_samples},p={n_features},noise={noise_sd})");
    Ok(Dataset::new(features, DVector::from_vec(targets), names)?.with_name(name))
}
