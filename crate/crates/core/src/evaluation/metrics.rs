use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DomainTag};
use crate::error::{CpError, Result};
use crate::prediction::PredictionSet;
use crate::scores::rank;

/// Fraction of sets that contain their row's label.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(CpError::DimensionMismatch {
            expected: labels.len(),
            found: sets.len(),
        });
    }
    if sets.is_empty() {
        return Err(CpError::invalid("coverage of an empty set list"));
    }
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

pub fn mean_set_size(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(CpError::invalid("mean set size of an empty set list"));
    }
    let total: usize = sets.iter().map(PredictionSet::len).sum();
    Ok(total as f64 / sets.len() as f64)
}

/// Fraction of rows whose label ranks among the `k` largest values.
pub fn top_k_accuracy(dataset: &Dataset, k: usize) -> Result<f64> {
    if dataset.domain() == DomainTag::Feature {
        return Err(CpError::invalid(
            "top-k accuracy needs probability or logit data",
        ));
    }
    if k == 0 || k > dataset.n_classes() {
        return Err(CpError::invalid(format!(
            "k = {k} outside [1, {}]",
            dataset.n_classes()
        )));
    }
    if dataset.is_empty() {
        return Err(CpError::invalid("top-k accuracy of an empty dataset"));
    }
    let hits = dataset
        .rows()
        .zip(dataset.labels())
        .filter(|(row, &y)| rank(row, y) <= k)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Trapezoid rule over possibly uneven abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(CpError::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum())
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CpError::invalid("median of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    /// Fraction of prediction sets containing the class.
    pub observed: BTreeMap<usize, f64>,
    /// Fraction of test labels equal to the class.
    pub expected: BTreeMap<usize, f64>,
}

pub fn minority_prevalence(
    sets: &[PredictionSet],
    minority_classes: &BTreeSet<usize>,
    test_labels: &[usize],
) -> Result<Prevalence> {
    if sets.is_empty() {
        return Err(CpError::invalid("prevalence of an empty set list"));
    }
    if sets.len() != test_labels.len() {
        return Err(CpError::DimensionMismatch {
            expected: test_labels.len(),
            found: sets.len(),
        });
    }
    let n = sets.len() as f64;
    let mut prevalence = Prevalence {
        observed: BTreeMap::new(),
        expected: BTreeMap::new(),
    };
    for &c in minority_classes {
        let inside = sets.iter().filter(|s| s.contains(c)).count();
        let labelled = test_labels.iter().filter(|&&y| y == c).count();
        prevalence.observed.insert(c, inside as f64 / n);
        prevalence.expected.insert(c, labelled as f64 / n);
    }
    Ok(prevalence)
}
