//! Datasets of model outputs in a tagged conformal domain.
//!
//! A [`Dataset`] is an immutable row-major matrix of points plus one class
//! label per row. Points live in one of three domains: the probability
//! simplex, logit space, or an arbitrary feature space.

mod io;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::rng;

pub use io::{
    labels_path, load_dataset, read_labels, read_matrix, save_dataset, write_atomic, write_matrix,
    DataFormat, MatrixDtype,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

/// Tolerance on probability row sums at ingestion.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Which conformal domain the points of a dataset live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Probability,
    Logit,
    Feature,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainTag::Probability => "probability",
            DomainTag::Logit => "logit",
            DomainTag::Feature => "feature",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DomainTag {
    type Err = CpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(DomainTag::Probability),
            "logit" => Ok(DomainTag::Logit),
            "feature" => Ok(DomainTag::Feature),
            other => Err(CpError::invalid(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    row_ids: Vec<u64>,
    domain: DomainTag,
    n_classes: usize,
}

impl Dataset {
    /// Builds a dataset from a row-major matrix, validating every invariant.
    ///
    /// Probability rows whose sum is within [`PROB_SUM_TOL`] of one are
    /// renormalized; rows further off are rejected.
    pub fn new(
        mut points: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        domain: DomainTag,
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(CpError::invalid("n_classes must be positive"));
        }
        if dim == 0 {
            return Err(CpError::invalid("points must have at least one column"));
        }
        if points.len() != labels.len() * dim {
            return Err(CpError::invalid(format!(
                "{} values do not form {} rows of width {dim}",
                points.len(),
                labels.len()
            )));
        }
        if domain != DomainTag::Feature && dim != n_classes {
            return Err(CpError::invalid(format!(
                "{domain} data must have one column per class: {dim} columns, {n_classes} classes"
            )));
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(CpError::invalid(format!(
                    "row {i}: label {label} out of range for {n_classes} classes"
                )));
            }
        }
        for (i, row) in points.chunks_mut(dim).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(CpError::invalid(format!(
                    "row {i}, column {j}: non-finite value"
                )));
            }
            if domain == DomainTag::Probability {
                normalize_probability_row(row)
                    .map_err(|msg| CpError::invalid(format!("row {i}: {msg}")))?;
            }
        }
        let row_ids = (0..labels.len() as u64).collect();
        Ok(Dataset {
            points,
            dim,
            labels,
            row_ids,
            domain,
            n_classes,
        })
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<usize>,
        domain: DomainTag,
        n_classes: usize,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(n_classes);
        let mut points = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(CpError::invalid(format!(
                    "row {i} has {} columns, expected {dim}",
                    row.len()
                )));
            }
            points.extend_from_slice(row);
        }
        Dataset::new(points, dim, labels, domain, n_classes)
    }

    /// Replaces the stable row identifiers used to address per-example
    /// random draws.
    pub fn with_row_ids(mut self, row_ids: Vec<u64>) -> Result<Self> {
        if row_ids.len() != self.len() {
            return Err(CpError::DimensionMismatch {
                expected: self.len(),
                found: row_ids.len(),
            });
        }
        self.row_ids = row_ids;
        Ok(self)
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

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order. Row ids travel with the rows.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut row_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            points.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            row_ids.push(self.row_ids[i]);
        }
        Dataset {
            points,
            dim: self.dim,
            labels,
            row_ids,
            domain: self.domain,
            n_classes: self.n_classes,
        }
    }

    /// Applies softmax to every row of a logit dataset.
    pub fn to_probabilities(&self) -> Result<Dataset> {
        if self.domain != DomainTag::Logit {
            return Err(CpError::DomainMismatch {
                expected: DomainTag::Logit.to_string(),
                found: self.domain.to_string(),
            });
        }
        let mut points = Vec::with_capacity(self.points.len());
        for row in self.rows() {
            points.extend(softmax(row)?);
        }
        Ok(Dataset {
            points,
            dim: self.dim,
            labels: self.labels.clone(),
            row_ids: self.row_ids.clone(),
            domain: DomainTag::Probability,
            n_classes: self.n_classes,
        })
    }
}

fn normalize_probability_row(row: &mut [f64]) -> std::result::Result<(), String> {
    if let Some(j) = row.iter().position(|&v| v < 0.0) {
        return Err(format!("column {j}: negative probability {}", row[j]));
    }
    let sum: f64 = row.iter().sum();
    let deviation = (sum - 1.0).abs();
    if deviation > PROB_SUM_TOL {
        return Err(format!("probabilities sum to {sum}, not 1"));
    }
    // Leave rows that are already 1 up to rounding untouched so that
    // renormalization is idempotent.
    if deviation > 1e-12 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(CpError::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CpError::invalid("softmax input contains non-finite values"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// How to divide a dataset into calibration and test parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub calib_fraction: f64,
    pub seed: u64,
}

/// Random calibration/test partition. Both parts keep original row order.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.calib_fraction > 0.0 && spec.calib_fraction < 1.0) {
        return Err(CpError::invalid(format!(
            "calib_fraction must lie in (0, 1), got {}",
            spec.calib_fraction
        )));
    }
    let n_calib = (spec.calib_fraction * dataset.len() as f64).round() as usize;
    split_exact(dataset, n_calib, spec.seed)
}

/// Random partition with exactly `n_calib` calibration rows.
pub fn split_exact(dataset: &Dataset, n_calib: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n_calib == 0 || n_calib >= n {
        return Err(CpError::invalid(format!(
            "split of {n} rows into {n_calib} calibration rows leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_SPLIT));
    let (calib, test) = order.split_at_mut(n_calib);
    calib.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(calib), dataset.subset(test)))
}

/// Subsamples each minority class down to `round(keep_fraction * count)`
/// rows. Rows of all other classes are kept as they are.
pub fn make_imbalanced(
    dataset: &Dataset,
    minority_classes: &BTreeSet<usize>,
    keep_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CpError::invalid(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    if let Some(&c) = minority_classes.iter().find(|&&c| c >= dataset.n_classes()) {
        return Err(CpError::invalid(format!(
            "minority class {c} out of range for {} classes",
            dataset.n_classes()
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_IMBALANCE);
    let mut keep = vec![true; dataset.len()];
    for &class in minority_classes {
        let rows: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels()[i] == class)
            .collect();
        let target = (keep_fraction * rows.len() as f64).round() as usize;
        if target == 0 && !rows.is_empty() {
            return Err(CpError::invalid(format!(
                "keep_fraction {keep_fraction} removes every row of class {class}"
            )));
        }
        let kept: BTreeSet<usize> = rows.choose_multiple(&mut rng, target).copied().collect();
        for i in rows {
            keep[i] = kept.contains(&i);
        }
    }
    let indices: Vec<usize> = (0..dataset.len()).filter(|&i| keep[i]).collect();
    Ok(dataset.subset(&indices))
}
