//! Scores defined as distances in the conformal domain.

use log::warn;
use serde::{Deserialize, Serialize};

use super::check_label;
use crate::data::Dataset;
use crate::distance::{cosine_distance, norm, squared_euclidean, Metric};
use crate::error::{CpError, Result};

/// Distance from a probability vector to the one-hot vector of `label`.
pub fn label_distance(point: &[f64], label: usize, metric: Metric) -> Result<f64> {
    check_label(label, point.len())?;
    let mut one_hot = vec![0.0; point.len()];
    one_hot[label] = 1.0;
    metric.distance(point, &one_hot)
}

/// Strongest competitor of `label`: highest value among the other classes.
fn runner_up(point: &[f64], label: usize) -> usize {
    let mut best = None::<usize>;
    for (j, &v) in point.iter().enumerate() {
        if j != label && best.is_none_or(|b| v > point[b]) {
            best = Some(j);
        }
    }
    best.expect("at least two classes")
}

fn check_margin_input(point: &[f64], label: usize) -> Result<()> {
    if point.len() < 2 {
        return Err(CpError::invalid(
            "margin distance needs at least two classes",
        ));
    }
    check_label(label, point.len())
}

/// Signed distance to the nearest decision boundary between `label` and its
/// strongest competitor `z`. Negative when `label` is the strict argmax.
///
/// Euclidean returns the order-equivalent `v_z - v_y`. Cosine returns
/// `sgn(v_z - v_y) * (1 - ||b|| / ||v||)` where `b` is `v` with both
/// coordinates replaced by their mean.
pub fn margin_distance(point: &[f64], label: usize, metric: Metric) -> Result<f64> {
    check_margin_input(point, label)?;
    let z = runner_up(point, label);
    let (vy, vz) = (point[label], point[z]);
    match metric {
        Metric::Euclidean if vy == vz => Ok(0.0),
        Metric::Euclidean => Ok(vz - vy),
        Metric::Cosine => {
            let full = norm(point);
            if full == 0.0 {
                return Err(CpError::invalid("margin cosine distance of a zero vector"));
            }
            if vy == vz {
                return Ok(0.0);
            }
            let a = 0.5 * (vy + vz);
            let mut boundary = point.to_vec();
            boundary[label] = a;
            boundary[z] = a;
            let magnitude = (1.0 - norm(&boundary) / full).max(0.0);
            Ok(if vz > vy { magnitude } else { -magnitude })
        }
    }
}

/// Euclidean margin written as the actual distance to the boundary point,
/// `sgn(v_z - v_y) * ||(|v_y - v_z| / 2, |v_y - v_z| / 2)||`.
pub fn margin_distance_full(point: &[f64], label: usize) -> Result<f64> {
    check_margin_input(point, label)?;
    let z = runner_up(point, label);
    let gap = point[z] - point[label];
    let half = 0.5 * gap.abs();
    let dist = (half * half + half * half).sqrt();
    Ok(if gap > 0.0 {
        dist
    } else if gap < 0.0 {
        -dist
    } else {
        0.0
    })
}

/// Per-class running sums of calibration points.
///
/// Inference uses the full class means; calibration removes the scored
/// point from its own class sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    dim: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
    total: Vec<f64>,
    n: usize,
}

impl ClassMeans {
    pub fn fit(calib: &Dataset) -> Self {
        let dim = calib.dim();
        let mut sums = vec![vec![0.0; dim]; calib.n_classes()];
        let mut counts = vec![0; calib.n_classes()];
        let mut total = vec![0.0; dim];
        for (row, &y) in calib.rows().zip(calib.labels()) {
            for ((s, t), v) in sums[y].iter_mut().zip(total.iter_mut()).zip(row) {
                *s += v;
                *t += v;
            }
            counts[y] += 1;
        }
        ClassMeans {
            dim,
            sums,
            counts,
            total,
            n: calib.len(),
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn global_mean(&self) -> Option<Vec<f64>> {
        (self.n > 0).then(|| self.total.iter().map(|s| s / self.n as f64).collect())
    }

    /// Mean of the calibration points of `class`; the global mean when the
    /// class has none.
    pub fn mean(&self, class: usize) -> Result<Vec<f64>> {
        let count = self.counts[class];
        if count == 0 {
            warn!("class {class} absent from calibration; using the global mean");
            return self
                .global_mean()
                .ok_or_else(|| CpError::invalid("empty calibration set"));
        }
        Ok(self.sums[class].iter().map(|s| s / count as f64).collect())
    }

    /// Mean of `class` with `point` (a member of that class) removed.
    pub fn mean_without(&self, class: usize, point: &[f64]) -> Result<Vec<f64>> {
        let count = self.counts[class];
        if count == 0 {
            return Err(CpError::invalid(format!(
                "point excluded from empty class {class}"
            )));
        }
        if count > 1 {
            let rest = (count - 1) as f64;
            return Ok(self.sums[class]
                .iter()
                .zip(point)
                .map(|(s, x)| (s - x) / rest)
                .collect());
        }
        if self.n < 2 {
            return Err(CpError::invalid(
                "leave-one-out mean of a single calibration point",
            ));
        }
        warn!("class {class} has a single calibration point; using the global mean");
        let rest = (self.n - 1) as f64;
        Ok(self
            .total
            .iter()
            .zip(point)
            .map(|(s, x)| (s - x) / rest)
            .collect())
    }
}

/// Distance to the mean of the label's calibration class. With
/// `exclude_self`, `point` is treated as a calibration member and removed
/// from that mean first.
pub fn mean_distance(
    point: &[f64],
    label: usize,
    metric: Metric,
    means: &ClassMeans,
    exclude_self: bool,
) -> Result<f64> {
    check_label(label, means.counts.len())?;
    if point.len() != means.dim {
        return Err(CpError::DimensionMismatch {
            expected: means.dim,
            found: point.len(),
        });
    }
    let center = if exclude_self {
        means.mean_without(label, point)?
    } else {
        means.mean(label)?
    };
    metric.distance(point, &center)
}

/// Smallest distance from `point` to the calibration points of each class,
/// `+inf` for classes without points. `exclude` skips one calibration row.
pub fn nearest_by_class(
    point: &[f64],
    calib: &Dataset,
    metric: Metric,
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    if point.len() != calib.dim() {
        return Err(CpError::DimensionMismatch {
            expected: calib.dim(),
            found: point.len(),
        });
    }
    let mut best = vec![f64::INFINITY; calib.n_classes()];
    for (i, (row, &y)) in calib.rows().zip(calib.labels()).enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = match metric {
            Metric::Euclidean => squared_euclidean(point, row),
            Metric::Cosine => cosine_distance(point, row)?,
        };
        if d < best[y] {
            best[y] = d;
        }
    }
    if metric == Metric::Euclidean {
        for d in &mut best {
            *d = d.sqrt();
        }
    }
    Ok(best)
}

/// Nearest same-class distance over nearest other-class distance, given the
/// per-class nearest distances.
pub fn ratio_from_nearest(nearest: &[f64], label: usize) -> Result<f64> {
    let same = nearest[label];
    let other = nearest
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    if same.is_infinite() {
        return Err(CpError::invalid(format!(
            "no calibration points of class {label}"
        )));
    }
    if other.is_infinite() {
        return Err(CpError::invalid(format!(
            "no calibration points outside class {label}"
        )));
    }
    if other == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(same / other)
}

pub fn knn_ratio(
    point: &[f64],
    label: usize,
    metric: Metric,
    calib: &Dataset,
    exclude: Option<usize>,
) -> Result<f64> {
    check_label(label, calib.n_classes())?;
    let nearest = nearest_by_class(point, calib, metric, exclude)?;
    ratio_from_nearest(&nearest, label)
}
