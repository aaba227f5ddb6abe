use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    check_alpha, quantile_rank, sorted_quantile, CalibrationMode, CalibrationScores,
};
use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
use crate::error::{CpError, Result};
use crate::nettail::NetworkTail;
use crate::rng;
use crate::scores::{ScoreConfig, Scorer};

/// Beta(a, b) parameters of the coverage law for `n` calibration points.
pub fn beta_parameters(n: usize, alpha: f64) -> (usize, usize) {
    let b = ((n + 1) as f64 * alpha + 1e-9).floor() as usize;
    let b = b.min(n + 1);
    (n + 1 - b, b)
}

/// Mean and variance of Beta(a, b).
pub fn beta_moments(a: usize, b: usize) -> (f64, f64) {
    let (a, b) = (a as f64, b as f64);
    let s = a + b;
    (a / s, a * b / (s * s * (s + 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCoverage {
    pub class: usize,
    /// Mean class-conditional coverage over trials where the class was in
    /// the test part.
    pub empirical_mean: f64,
    /// Mean over the same trials of the exact expected coverage given the
    /// class's calibration count.
    pub expected_mean: f64,
    pub mean_calib_count: f64,
    pub trials_present: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCheck {
    pub n_calib: usize,
    pub alpha: f64,
    pub a: usize,
    pub b: usize,
    pub beta_mean: f64,
    pub beta_variance: f64,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_class: Vec<ClassCoverage>,
}

/// Repeated random calibration/test draws from one fixed pool.
#[derive(Debug, Clone)]
pub struct CoverageStudy<'a> {
    pub pool: &'a Dataset,
    pub tail: Option<Arc<NetworkTail>>,
    pub score: &'a ScoreConfig,
    pub mode: CalibrationMode,
    pub n_calib: usize,
    pub test_size: usize,
    pub trials: usize,
    pub alphas: &'a [f64],
    pub seed: u64,
}

struct Trial {
    calib_scores: Vec<f64>,
    calib_labels: Vec<usize>,
    test_scores: Vec<f64>,
    test_labels: Vec<usize>,
}

/// Per-class tallies of one trial at one α.
#[derive(Clone, Copy, Default)]
struct Tally {
    covered: usize,
    tested: usize,
    calib: usize,
}

fn draw(n: usize, n_calib: usize, test_size: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_SPLIT));
    let mut calib = order[..n_calib].to_vec();
    let mut test = order[n_calib..n_calib + test_size].to_vec();
    calib.sort_unstable();
    test.sort_unstable();
    (calib, test)
}

fn pick<T: Copy>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Runs the study and returns one check per α, in the given order.
pub fn coverage_study(study: &CoverageStudy<'_>) -> Result<Vec<BetaCheck>> {
    let pool = study.pool;
    if study.trials < 100 {
        return Err(CpError::invalid(format!(
            "at least 100 trials are needed, got {}",
            study.trials
        )));
    }
    if study.n_calib == 0 || study.test_size == 0 || study.n_calib + study.test_size > pool.len() {
        return Err(CpError::invalid(format!(
            "cannot draw {} calibration and {} test rows from a pool of {}",
            study.n_calib,
            study.test_size,
            pool.len()
        )));
    }
    if study.alphas.is_empty() {
        return Err(CpError::invalid("no error rates to check"));
    }
    for &alpha in study.alphas {
        check_alpha(alpha)?;
        if beta_parameters(study.n_calib, alpha).1 == 0 {
            return Err(CpError::invalid(format!(
                "alpha {alpha} is too small for {} calibration points",
                study.n_calib
            )));
        }
    }

    // Scores that ignore the calibration set are computed once for the pool.
    let pool_scores = if study.score.kind.is_context_free() {
        Some(Scorer::fit(study.score, pool, study.tail.clone())?.1)
    } else {
        None
    };

    let n_classes = pool.n_classes();
    let tallies = (0..study.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<Vec<Tally>>> {
            let seed = study.seed ^ t as u64;
            let (ci, ti) = draw(pool.len(), study.n_calib, study.test_size, seed);
            let trial = match &pool_scores {
                Some(s) => Trial {
                    calib_scores: pick(s, &ci),
                    calib_labels: pick(pool.labels(), &ci),
                    test_scores: pick(s, &ti),
                    test_labels: pick(pool.labels(), &ti),
                },
                None => {
                    let calib = pool.subset(&ci);
                    let test = pool.subset(&ti);
                    let cs = CalibrationScores::compute(&calib, study.score, study.tail.clone())?;
                    Trial {
                        test_scores: cs.scorer().true_label_scores(&test)?,
                        calib_scores: cs.scores().to_vec(),
                        calib_labels: calib.labels().to_vec(),
                        test_labels: test.labels().to_vec(),
                    }
                }
            };
            study
                .alphas
                .iter()
                .map(|&alpha| tally(&trial, study.mode, alpha, n_classes))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(study
        .alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| summarize(study, ai, alpha, &tallies, n_classes))
        .collect())
}

fn tally(trial: &Trial, mode: CalibrationMode, alpha: f64, n_classes: usize) -> Result<Vec<Tally>> {
    let mut tallies = vec![Tally::default(); n_classes + 1];
    let thresholds: Vec<f64> = match mode {
        CalibrationMode::Marginal => {
            let mut s = trial.calib_scores.clone();
            s.sort_by(f64::total_cmp);
            vec![sorted_quantile(&s, alpha); n_classes]
        }
        CalibrationMode::Mondrian => {
            let mut by_class = vec![Vec::new(); n_classes];
            for (&s, &y) in trial.calib_scores.iter().zip(&trial.calib_labels) {
                by_class[y].push(s);
            }
            by_class
                .into_iter()
                .enumerate()
                .map(|(c, mut s)| {
                    if s.is_empty() {
                        return Err(CpError::MissingClass(c));
                    }
                    s.sort_by(f64::total_cmp);
                    Ok(sorted_quantile(&s, alpha))
                })
                .collect::<Result<_>>()?
        }
    };
    for &y in &trial.calib_labels {
        tallies[y].calib += 1;
    }
    for (&s, &y) in trial.test_scores.iter().zip(&trial.test_labels) {
        let hit = (s <= thresholds[y]) as usize;
        tallies[y].tested += 1;
        tallies[y].covered += hit;
        tallies[n_classes].tested += 1;
        tallies[n_classes].covered += hit;
    }
    Ok(tallies)
}

fn summarize(
    study: &CoverageStudy<'_>,
    ai: usize,
    alpha: f64,
    tallies: &[Vec<Vec<Tally>>],
    n_classes: usize,
) -> BetaCheck {
    let (a, b) = beta_parameters(study.n_calib, alpha);
    let (beta_mean, beta_variance) = beta_moments(a, b);
    let cov: Vec<f64> = tallies
        .iter()
        .map(|t| {
            let all = t[ai][n_classes];
            all.covered as f64 / all.tested as f64
        })
        .collect();
    let trials = cov.len() as f64;
    let mean = cov.iter().sum::<f64>() / trials;
    let variance = cov.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1.0);

    let per_class = match study.mode {
        CalibrationMode::Marginal => Vec::new(),
        CalibrationMode::Mondrian => (0..n_classes)
            .map(|c| {
                let present: Vec<Tally> = tallies
                    .iter()
                    .map(|t| t[ai][c])
                    .filter(|t| t.tested > 0)
                    .collect();
                let m = present.len().max(1) as f64;
                let expected = |n: usize| {
                    let k = quantile_rank(n, alpha);
                    if k > n {
                        1.0
                    } else {
                        k as f64 / (n + 1) as f64
                    }
                };
                ClassCoverage {
                    class: c,
                    empirical_mean: present
                        .iter()
                        .map(|t| t.covered as f64 / t.tested as f64)
                        .sum::<f64>()
                        / m,
                    expected_mean: present.iter().map(|t| expected(t.calib)).sum::<f64>() / m,
                    mean_calib_count: present.iter().map(|t| t.calib as f64).sum::<f64>() / m,
                    trials_present: present.len(),
                }
            })
            .collect(),
    };

    BetaCheck {
        n_calib: study.n_calib,
        alpha,
        a,
        b,
        beta_mean,
        beta_variance,
        empirical_mean: mean,
        empirical_variance: variance,
        trials: tallies.len(),
        per_class,
    }
}

/// Marginal coverage study on a synthetic pool of exactly
/// `n_calib + test_size` rows generated from `generator` (its `n` is
/// replaced).
pub fn beta_coverage_check(
    n_calib: usize,
    alpha: f64,
    trials: usize,
    test_size: usize,
    generator: &SyntheticSpec,
    score: &ScoreConfig,
    seed: u64,
) -> Result<BetaCheck> {
    let spec = SyntheticSpec {
        n: n_calib + test_size,
        ..generator.clone()
    };
    let synth = generate_synthetic(&spec)?;
    let pool = synth.view(score.domain)?;
    let study = CoverageStudy {
        pool: &pool,
        tail: synth.tail.map(Arc::new),
        score,
        mode: CalibrationMode::Marginal,
        n_calib,
        test_size,
        trials,
        alphas: &[alpha],
        seed,
    };
    Ok(coverage_study(&study)?.remove(0))
}
