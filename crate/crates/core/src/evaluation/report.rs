use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationMode, CalibrationScores};
use crate::config::{RunConfig, RunData};
use crate::data::write_atomic;
use crate::error::{CpError, Result};
use crate::scores::ScoreKind;

use super::ik::{accuracy_view, alpha_grid, curve_from_scores, sets_from_matrix};
use super::metrics::{coverage, mean_set_size, median, minority_prevalence, top_k_accuracy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_digest: String,
    pub n_calib: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub score: ScoreKind,
    pub mode: CalibrationMode,
    pub alpha: f64,
    pub k: usize,
    pub coverage: f64,
    pub mean_set_size: f64,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub i_k: f64,
    pub per_class_coverage: BTreeMap<usize, f64>,
    /// Fraction of prediction sets containing each class.
    pub per_class_prevalence: BTreeMap<usize, f64>,
    /// Fraction of test labels equal to each class.
    pub expected_prevalence: BTreeMap<usize, f64>,
    pub alpha_grid: Vec<f64>,
    pub curve: Vec<f64>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub median: EvalReport,
    pub repetitions: Vec<EvalReport>,
}

/// One repetition with the run's own seed.
pub fn evaluate(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let data = config.load_data()?;
    evaluate_with(config, &data, config.seed)
}

/// Evaluates the split drawn with `seed`.
pub fn evaluate_with(config: &RunConfig, data: &RunData, seed: u64) -> Result<EvalReport> {
    let (calib, test) = data.split(config.calib_fraction, seed)?;
    if test.is_empty() {
        return Err(CpError::invalid("test set is empty"));
    }
    let tail = data.tail();
    let reference = accuracy_view(&test, tail.as_deref())?;
    let top_k_accuracy = (1..=config.k)
        .map(|k| Ok((k, top_k_accuracy(&reference, k)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let a_k = top_k_accuracy[&config.k];

    let scores = CalibrationScores::compute(&calib, &config.score, tail)?;
    let matrix = scores.scorer().score_matrix(&test)?;
    let sets = sets_from_matrix(&matrix, &scores.thresholds(config.mode, config.alpha)?);
    let curve = curve_from_scores(
        &scores,
        &matrix,
        config.mode,
        config.k,
        a_k,
        alpha_grid(a_k, config.grid_points)?,
    )?;

    let classes = (0..test.n_classes()).collect();
    let prevalence = minority_prevalence(&sets, &classes, test.labels())?;
    let mut per_class_coverage = BTreeMap::new();
    for c in 0..test.n_classes() {
        let idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] == c).collect();
        if !idx.is_empty() {
            let hits = idx.iter().filter(|&&i| sets[i].contains(c)).count();
            per_class_coverage.insert(c, hits as f64 / idx.len() as f64);
        }
    }

    Ok(EvalReport {
        score: config.score.kind,
        mode: config.mode,
        alpha: config.alpha,
        k: config.k,
        coverage: coverage(&sets, test.labels())?,
        mean_set_size: mean_set_size(&sets)?,
        top_k_accuracy,
        i_k: curve.i_k,
        per_class_coverage,
        per_class_prevalence: prevalence.observed,
        expected_prevalence: prevalence.expected,
        alpha_grid: curve.alpha_grid,
        curve: curve.mean_set_size,
        metadata: ReportMetadata {
            seed,
            config_digest: config.digest(),
            n_calib: calib.len(),
            n_test: test.len(),
        },
    })
}

/// Repetition `r` evaluates the split drawn with `seed ^ r`; the summary
/// holds component-wise medians of the scalar metrics.
pub fn sweep(config: &RunConfig) -> Result<SweepReport> {
    config.validate()?;
    let data = config.load_data()?;
    let repetitions = (0..config.repetitions as u64)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed ^ r;
            evaluate_with(config, &data, seed).map_err(|e| CpError::Repetition {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        median: median_report(&repetitions)?,
        repetitions,
    })
}

fn median_map(
    reports: &[EvalReport],
    field: impl Fn(&EvalReport) -> &BTreeMap<usize, f64>,
) -> Result<BTreeMap<usize, f64>> {
    let keys: std::collections::BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| field(r).keys().copied())
        .collect();
    keys.into_iter()
        .map(|k| {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|r| field(r).get(&k).copied())
                .collect();
            Ok((k, median(&values)?))
        })
        .collect()
}

/// Component-wise median of scalar metrics. Curves are kept only when
/// there is a single report.
pub fn median_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| CpError::invalid("median of zero reports"))?;
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let scalar = |f: fn(&EvalReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        score: first.score,
        mode: first.mode,
        alpha: first.alpha,
        k: first.k,
        coverage: scalar(|r| r.coverage)?,
        mean_set_size: scalar(|r| r.mean_set_size)?,
        top_k_accuracy: median_map(reports, |r| &r.top_k_accuracy)?,
        i_k: scalar(|r| r.i_k)?,
        per_class_coverage: median_map(reports, |r| &r.per_class_coverage)?,
        per_class_prevalence: median_map(reports, |r| &r.per_class_prevalence)?,
        expected_prevalence: median_map(reports, |r| &r.expected_prevalence)?,
        alpha_grid: Vec::new(),
        curve: Vec::new(),
        metadata: first.metadata.clone(),
    })
}

/// CSV with header `alpha,mean_set_size`.
pub fn write_curve_csv(path: &Path, alpha_grid: &[f64], sizes: &[f64]) -> Result<()> {
    let mut out = String::from("alpha,mean_set_size\n");
    for (a, s) in alpha_grid.iter().zip(sizes) {
        out.push_str(&format!("{a},{s}\n"));
    }
    write_atomic(path, out.as_bytes())
}
