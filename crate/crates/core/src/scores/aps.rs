//! APS, RAPS and SAPS scores.
//!
//! All three are built from the classes ranked above the candidate. The
//! "mass above" a class is accumulated in descending value order so that the
//! per-class scores here and the cumulative walk used by the fast prediction
//! path perform the same floating-point additions in the same order.

use super::rank;

/// Class indices sorted by descending value, ties by ascending index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Sum of the values strictly greater than `values[label]`, added in
/// descending order.
pub(crate) fn mass_above(values: &[f64], order: &[usize], label: usize) -> f64 {
    let v = values[label];
    let mut above = 0.0;
    for &j in order {
        if values[j] > v {
            above += values[j];
        } else {
            break;
        }
    }
    above
}

#[inline]
pub(crate) fn raps_from_parts(
    above: f64,
    u: f64,
    value: f64,
    rank: usize,
    lambda: f64,
    k_reg: usize,
) -> f64 {
    (above + u * value) + lambda * rank.saturating_sub(k_reg) as f64
}

#[inline]
pub(crate) fn saps_from_parts(max: f64, u: f64, rank: usize, lambda: f64) -> f64 {
    if rank == 1 {
        u * max
    } else {
        max + lambda * ((rank - 2) as f64 + u)
    }
}

/// `sum_{v_j > v_y} v_j + u * v_y`
pub fn aps_score(values: &[f64], label: usize, u: f64) -> f64 {
    let order = descending_order(values);
    mass_above(values, &order, label) + u * values[label]
}

/// APS plus `lambda * max(rank - k_reg, 0)`.
pub fn raps_score(values: &[f64], label: usize, lambda: f64, k_reg: usize, u: f64) -> f64 {
    let order = descending_order(values);
    let above = mass_above(values, &order, label);
    raps_from_parts(above, u, values[label], rank(values, label), lambda, k_reg)
}

/// Rank-based variant that keeps only the largest value:
/// `u * max` at rank 1, otherwise `max + lambda * (rank - 2 + u)`.
pub fn saps_score(values: &[f64], label: usize, lambda: f64, u: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    saps_from_parts(max, u, rank(values, label), lambda)
}

/// Precomputed per-point quantities for scoring every class at once.
pub struct ApsParts<'a> {
    values: &'a [f64],
    order: Vec<usize>,
    max: f64,
}

impl<'a> ApsParts<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        let order = descending_order(values);
        let max = order.first().map_or(f64::NEG_INFINITY, |&j| values[j]);
        ApsParts { values, order, max }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub(crate) fn mass_above(&self, label: usize) -> f64 {
        mass_above(self.values, &self.order, label)
    }
}

/// Threshold search of the original randomized APS procedure.
///
/// Scans `tau = 0, step, 2*step, ...` and returns the first grid value at
/// which the label enters the randomized set. With the convention used
/// there, the result approximates `aps_score(values, label, 1 - u)` from
/// above, within one grid step.
pub fn aps_tau_naive(values: &[f64], label: usize, u: f64, grid_step: f64) -> f64 {
    assert!(grid_step > 0.0, "grid_step must be positive");
    let order = descending_order(values);
    let pos = order
        .iter()
        .position(|&j| j == label)
        .expect("label in range");
    let cumulative: f64 = order[..=pos].iter().map(|&j| values[j]).sum();
    let p = values[label];
    let mut i: u64 = 0;
    loop {
        let tau = i as f64 * grid_step;
        let v = (cumulative - tau) / p;
        // The boundary class is dropped once `u <= v`.
        let included = u > v || v.is_nan();
        if included {
            return tau;
        }
        i += 1;
    }
}
