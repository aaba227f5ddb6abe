//! Prediction sets from a calibrated predictor.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibratedPredictor, CalibrationMode, Thresholds};
use crate::data::{write_atomic, Dataset, DomainTag};
use crate::error::{CpError, Result};
use crate::scores::aps::{raps_from_parts, saps_from_parts};
use crate::scores::{descending_order, ScoreKind};

/// Class indices in ascending order, without duplicates. May be empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        PredictionSet { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.members.iter().all(|&c| other.contains(c))
    }
}

/// Classes whose score does not exceed their threshold.
pub fn set_from_scores(scores: &[f64], thresholds: &Thresholds) -> PredictionSet {
    PredictionSet {
        members: scores
            .iter()
            .enumerate()
            .filter(|&(c, &s)| s <= thresholds.for_class(c))
            .map(|(c, _)| c)
            .collect(),
    }
}

impl CalibratedPredictor {
    /// Scores every candidate class of `point` and keeps those at or below
    /// their threshold. `row_id` addresses the per-example random draws.
    pub fn predict_point(&self, point: &[f64], row_id: u64) -> Result<PredictionSet> {
        let scores = self.scorer().class_scores(point, row_id)?;
        Ok(set_from_scores(&scores, self.thresholds()))
    }
}

pub fn predict_set(
    point: &[f64],
    domain: DomainTag,
    predictor: &CalibratedPredictor,
) -> Result<PredictionSet> {
    if domain != predictor.config().domain {
        return Err(CpError::DomainMismatch {
            expected: predictor.config().domain.to_string(),
            found: domain.to_string(),
        });
    }
    predictor.predict_point(point, 0)
}

/// Prediction sets for every row of `test`, in row order.
pub fn predict_batch(
    test: &Dataset,
    predictor: &CalibratedPredictor,
) -> Result<Vec<PredictionSet>> {
    predictor.scorer().check_dataset(test)?;
    (0..test.len())
        .into_par_iter()
        .map(|i| {
            predictor
                .predict_point(test.row(i), test.row_ids()[i])
                .map_err(|e| e.at_row(i))
        })
        .collect()
}

/// APS-family prediction without scoring each class separately: classes
/// are visited in descending order while the mass above them accumulates.
///
/// For non-negative values the scores grow from one tie group to the next,
/// so the walk stops after the first group containing a class above the
/// threshold.
pub fn predict_set_aps_fast(
    values: &[f64],
    row_id: u64,
    predictor: &CalibratedPredictor,
) -> Result<PredictionSet> {
    let config = predictor.config();
    if !config.kind.is_aps_family() {
        return Err(CpError::invalid(format!(
            "fast prediction path is only defined for APS-family scores, not {}",
            config.kind
        )));
    }
    if predictor.mode() != CalibrationMode::Marginal {
        return Err(CpError::invalid(
            "fast prediction path requires a marginal predictor",
        ));
    }
    if values.len() != predictor.n_classes() {
        return Err(CpError::DimensionMismatch {
            expected: predictor.n_classes(),
            found: values.len(),
        });
    }
    let tau = predictor.threshold_for(0);
    let order = descending_order(values);
    let non_negative = values.iter().all(|&v| v >= 0.0);
    let max = values[order[0]];

    let mut members = Vec::new();
    let mut running = 0.0;
    let mut above = 0.0;
    let mut group_exceeded = false;
    for (pos, &class) in order.iter().enumerate() {
        let v = values[class];
        if pos == 0 || v < values[order[pos - 1]] {
            if non_negative && group_exceeded {
                break;
            }
            above = running;
            group_exceeded = false;
        }
        let u = config.u_mode.value(row_id, class);
        let rank = pos + 1;
        let score = match config.kind {
            ScoreKind::Aps => above + u * v,
            ScoreKind::Raps => raps_from_parts(above, u, v, rank, config.lambda, config.k_reg),
            ScoreKind::Saps => saps_from_parts(max, u, rank, config.lambda),
            _ => unreachable!(),
        };
        if score <= tau {
            members.push(class);
        } else {
            group_exceeded = true;
        }
        running += v;
    }
    Ok(PredictionSet::new(members))
}

/// Writes `row,classes` CSV with semicolon-joined class lists.
pub fn write_predictions_csv(path: &Path, sets: &[PredictionSet]) -> Result<()> {
    let mut out = String::from("row,classes\n");
    for (i, set) in sets.iter().enumerate() {
        let classes: Vec<String> = set.members().iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("{i},{}\n", classes.join(";")));
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::scores::{ScoreConfig, UMode};
    use crate::Metric;

    fn probs(n: usize, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n,
            n_classes: 5,
            accuracy_target: 0.6,
            noise_temperature: 1.0,
            feature_dim: None,
            seed,
        })
        .unwrap()
        .view(DomainTag::Probability)
        .unwrap()
    }

    fn predictor(kind: ScoreKind, mode: CalibrationMode, alpha: f64) -> CalibratedPredictor {
        let cfg = ScoreConfig::new(kind, DomainTag::Probability);
        calibrate(&probs(200, 1), &cfg, None, mode, alpha).unwrap()
    }

    #[test]
    fn vacuous_and_impossible_thresholds() {
        let p = predictor(ScoreKind::Aps, CalibrationMode::Marginal, 0.001);
        assert_eq!(p.threshold_for(0), f64::INFINITY);
        let set = p.predict_point(&[0.2; 5], 0).unwrap();
        assert_eq!(set.members(), &[0, 1, 2, 3, 4]);

        let scores = [0.1, 0.2, 0.3];
        assert!(set_from_scores(&scores, &Thresholds::Marginal(0.0)).is_empty());
        assert_eq!(
            set_from_scores(&scores, &Thresholds::Marginal(0.2)).members(),
            &[0, 1]
        );
    }

    #[test]
    fn margin_example() {
        let rows = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.1, 0.2, 0.7],
        ];
        let ds = Dataset::from_rows(&rows, vec![0, 1, 2], DomainTag::Probability, 3).unwrap();
        let cfg = ScoreConfig::new(ScoreKind::MarginDistance, DomainTag::Probability)
            .with_metric(Metric::Euclidean);
        let p = calibrate(&ds, &cfg, None, CalibrationMode::Marginal, 0.5).unwrap();
        let scores = p.scorer().class_scores(&[0.7, 0.2, 0.1], 0).unwrap();
        let expected = [-0.5, 0.5, 0.6];
        for (s, e) in scores.iter().zip(expected) {
            assert!((s - e).abs() < 1e-12);
        }
        assert_eq!(
            set_from_scores(&scores, &Thresholds::Marginal(-0.1)).members(),
            &[0]
        );
    }

    #[test]
    fn fast_path_matches_generic_path() {
        for kind in [ScoreKind::Aps, ScoreKind::Raps, ScoreKind::Saps] {
            for u_mode in [UMode::Constant(0.001), UMode::Random { seed: 3 }] {
                let cfg = ScoreConfig::new(kind, DomainTag::Probability).with_u(u_mode);
                let calib = probs(300, 9);
                let test = probs(200, 10);
                for alpha in [0.02, 0.1, 0.3, 0.6] {
                    let p =
                        calibrate(&calib, &cfg, None, CalibrationMode::Marginal, alpha).unwrap();
                    for i in 0..test.len() {
                        let id = test.row_ids()[i];
                        let slow = p.predict_point(test.row(i), id).unwrap();
                        let fast = predict_set_aps_fast(test.row(i), id, &p).unwrap();
                        assert_eq!(slow, fast, "{kind} alpha {alpha} row {i}");
                    }
                }
            }
        }
    }

    #[test]
    fn fast_path_handles_ties_and_logits() {
        let cfg =
            ScoreConfig::new(ScoreKind::Raps, DomainTag::Logit).with_u(UMode::Random { seed: 1 });
        let rows = vec![
            vec![1.0, -2.0, 1.0, 0.5],
            vec![-1.0, -1.0, -3.0, 2.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ];
        let ds = Dataset::from_rows(&rows, vec![0, 1, 2], DomainTag::Logit, 4).unwrap();
        for alpha in [0.3, 0.5, 0.7] {
            let p = calibrate(&ds, &cfg, None, CalibrationMode::Marginal, alpha).unwrap();
            for probe in &rows {
                assert_eq!(
                    p.predict_point(probe, 7).unwrap(),
                    predict_set_aps_fast(probe, 7, &p).unwrap()
                );
            }
        }
    }

    #[test]
    fn fast_path_rejects_other_predictors() {
        let p = predictor(ScoreKind::LabelDistance, CalibrationMode::Marginal, 0.1);
        assert!(predict_set_aps_fast(&[0.2; 5], 0, &p).is_err());
        let p = predictor(ScoreKind::Aps, CalibrationMode::Mondrian, 0.1);
        assert!(predict_set_aps_fast(&[0.2; 5], 0, &p).is_err());
    }

    #[test]
    fn batch_examples() {
        let p = predictor(ScoreKind::Aps, CalibrationMode::Marginal, 0.1);
        let test = probs(50, 4);
        let batch = predict_batch(&test, &p).unwrap();
        let rowwise: Vec<PredictionSet> = (0..test.len())
            .map(|i| p.predict_point(test.row(i), test.row_ids()[i]).unwrap())
            .collect();
        assert_eq!(batch, rowwise);
        assert_eq!(batch, predict_batch(&test, &p).unwrap());
        let empty = test.subset(&[]);
        assert!(predict_batch(&empty, &p).unwrap().is_empty());
        let logits = Dataset::from_rows(&[vec![0.0; 5]], vec![0], DomainTag::Logit, 5).unwrap();
        assert!(matches!(
            predict_batch(&logits, &p),
            Err(CpError::DomainMismatch { .. })
        ));
        assert!(predict_set(&[0.2; 5], DomainTag::Logit, &p).is_err());
        assert!(predict_set(&[0.2; 5], DomainTag::Probability, &p).is_ok());
    }

    #[test]
    fn sets_shrink_as_alpha_grows() {
        let test = probs(100, 5);
        for kind in [
            ScoreKind::Aps,
            ScoreKind::LabelDistance,
            ScoreKind::MarginDistance,
        ] {
            for mode in [CalibrationMode::Marginal, CalibrationMode::Mondrian] {
                let small = predict_batch(&test, &predictor(kind, mode, 0.05)).unwrap();
                let large = predict_batch(&test, &predictor(kind, mode, 0.3)).unwrap();
                for (a, b) in large.iter().zip(&small) {
                    assert!(a.is_subset(b));
                }
            }
        }
    }

    #[test]
    fn mondrian_inclusion_uses_own_threshold() {
        let scores = [0.5, 0.5, 0.5];
        let t = Thresholds::Mondrian(vec![0.4, 0.5, 0.6]);
        assert_eq!(set_from_scores(&scores, &t).members(), &[1, 2]);
        let t2 = Thresholds::Mondrian(vec![0.4, 0.5, 100.0]);
        assert_eq!(
            set_from_scores(&scores, &t2).contains(1),
            set_from_scores(&scores, &t).contains(1)
        );
    }
}
