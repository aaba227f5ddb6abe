use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationMode, CalibrationScores, Thresholds};
use crate::data::{Dataset, DomainTag};
use crate::error::{CpError, Result};
use crate::nettail::NetworkTail;
use crate::prediction::{set_from_scores, PredictionSet};
use crate::scores::ScoreConfig;

use super::metrics::{mean_set_size, top_k_accuracy, trapezoid};

/// Smallest error rate on the integration grid.
pub const ALPHA_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkCurve {
    pub k: usize,
    pub a_k: f64,
    pub i_k: f64,
    pub alpha_grid: Vec<f64>,
    pub mean_set_size: Vec<f64>,
}

/// `grid_points` evenly spaced error rates from the floor to `1 - a_k`.
pub fn alpha_grid(a_k: f64, grid_points: usize) -> Result<Vec<f64>> {
    if grid_points < 2 {
        return Err(CpError::invalid("grid_points must be at least 2"));
    }
    let hi = 1.0 - a_k;
    if a_k >= 1.0 {
        return Err(CpError::invalid(
            "top-k accuracy is 1, the integration interval is empty",
        ));
    }
    if hi <= ALPHA_FLOOR || hi >= 1.0 {
        return Err(CpError::invalid(format!(
            "integration interval [{ALPHA_FLOOR}, {hi}] is degenerate"
        )));
    }
    let step = (hi - ALPHA_FLOOR) / (grid_points - 1) as f64;
    let mut grid: Vec<f64> = (0..grid_points)
        .map(|i| ALPHA_FLOOR + i as f64 * step)
        .collect();
    grid[grid_points - 1] = hi;
    Ok(grid)
}

/// Model outputs to measure top-k accuracy on. Feature data goes through
/// the network tail.
pub fn accuracy_view<'a>(
    data: &'a Dataset,
    tail: Option<&NetworkTail>,
) -> Result<Cow<'a, Dataset>> {
    if data.domain() != DomainTag::Feature {
        return Ok(Cow::Borrowed(data));
    }
    let tail =
        tail.ok_or_else(|| CpError::invalid("accuracy on feature data needs a network tail"))?;
    let mut points = Vec::with_capacity(data.len() * tail.output_dim());
    for row in data.rows() {
        points.extend(tail.forward(row)?);
    }
    let out = Dataset::new(
        points,
        tail.output_dim(),
        data.labels().to_vec(),
        DomainTag::Logit,
        tail.output_dim(),
    )?;
    Ok(Cow::Owned(out.with_row_ids(data.row_ids().to_vec())?))
}

pub fn sets_from_matrix(matrix: &[Vec<f64>], thresholds: &Thresholds) -> Vec<PredictionSet> {
    matrix
        .iter()
        .map(|row| set_from_scores(row, thresholds))
        .collect()
}

/// Mean set size over an α grid ending at `1 - A_k`, integrated with the
/// trapezoid rule and divided by `1 - A_k`. Calibration and test scores
/// are computed once; only the thresholds change along the grid.
#[allow(clippy::too_many_arguments)]
pub fn compute_i_k(
    calib: &Dataset,
    test: &Dataset,
    config: &ScoreConfig,
    tail: Option<Arc<NetworkTail>>,
    mode: CalibrationMode,
    k: usize,
    grid_points: usize,
    reference: Option<&Dataset>,
) -> Result<IkCurve> {
    let reference = match reference {
        Some(r) => Cow::Borrowed(r),
        None => accuracy_view(test, tail.as_deref())?,
    };
    let a_k = top_k_accuracy(&reference, k)?;
    let grid = alpha_grid(a_k, grid_points)?;
    let scores = CalibrationScores::compute(calib, config, tail)?;
    let matrix = scores.scorer().score_matrix(test)?;
    curve_from_scores(&scores, &matrix, mode, k, a_k, grid)
}

pub(crate) fn curve_from_scores(
    scores: &CalibrationScores,
    matrix: &[Vec<f64>],
    mode: CalibrationMode,
    k: usize,
    a_k: f64,
    grid: Vec<f64>,
) -> Result<IkCurve> {
    let sizes = grid
        .iter()
        .map(|&alpha| mean_set_size(&sets_from_matrix(matrix, &scores.thresholds(mode, alpha)?)))
        .collect::<Result<Vec<f64>>>()?;
    let i_k = trapezoid(&grid, &sizes)? / (1.0 - a_k);
    Ok(IkCurve {
        k,
        a_k,
        i_k,
        alpha_grid: grid,
        mean_set_size: sizes,
    })
}
