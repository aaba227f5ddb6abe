use std::sync::Arc;

use rayon::prelude::*;

use super::aps::{aps_score, raps_from_parts, raps_score, saps_from_parts, saps_score, ApsParts};
use super::distance_based::{
    knn_ratio, label_distance, margin_distance, mean_distance, nearest_by_class,
    ratio_from_nearest, ClassMeans,
};
use super::gradient::{fast_gradient_score, gradient_score};
use super::{check_label, rank, ScoreConfig, ScoreKind};
use crate::data::Dataset;
use crate::error::{CpError, Result};
use crate::nettail::NetworkTail;

/// Calibration-derived state a score needs at inference time.
#[derive(Debug, Clone)]
pub enum ScoreContext {
    Empty,
    Means(ClassMeans),
    Neighbors(Arc<Dataset>),
    Tail(Arc<NetworkTail>),
}

/// A score configuration bound to its context.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScoreConfig,
    n_classes: usize,
    dim: usize,
    context: ScoreContext,
}

impl Scorer {
    /// Builds the inference context from `calib` and returns the
    /// calibration scores of every row under its true label. Statistics
    /// over the calibration set exclude the row being scored.
    pub fn fit(
        config: &ScoreConfig,
        calib: &Dataset,
        tail: Option<Arc<NetworkTail>>,
    ) -> Result<(Scorer, Vec<f64>)> {
        config.validate()?;
        if calib.is_empty() {
            return Err(CpError::invalid("calibration set is empty"));
        }
        let context = match config.kind {
            ScoreKind::MeanDistance => ScoreContext::Means(ClassMeans::fit(calib)),
            ScoreKind::KnnRatio => ScoreContext::Neighbors(Arc::new(calib.clone())),
            ScoreKind::Gradient | ScoreKind::FastGradient => {
                ScoreContext::Tail(tail.ok_or_else(|| {
                    CpError::invalid(format!("{} scores need a network tail", config.kind))
                })?)
            }
            _ => ScoreContext::Empty,
        };
        let scorer = Scorer::from_parts(config.clone(), calib.n_classes(), calib.dim(), context)?;
        scorer.check_dataset(calib)?;
        let scores = (0..calib.len())
            .into_par_iter()
            .map(|i| {
                scorer.score_impl(calib.row(i), calib.row_ids()[i], calib.labels()[i], Some(i))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((scorer, scores))
    }

    /// Reassembles a scorer from persisted parts.
    pub fn from_parts(
        config: ScoreConfig,
        n_classes: usize,
        dim: usize,
        context: ScoreContext,
    ) -> Result<Scorer> {
        config.validate()?;
        let context_ok = match (&context, config.kind) {
            (ScoreContext::Means(_), ScoreKind::MeanDistance) => true,
            (ScoreContext::Neighbors(d), ScoreKind::KnnRatio) => {
                d.dim() == dim && d.n_classes() == n_classes
            }
            (ScoreContext::Tail(t), ScoreKind::Gradient | ScoreKind::FastGradient) => {
                if t.input_dim() != dim || t.output_dim() != n_classes {
                    return Err(CpError::invalid(format!(
                        "network tail maps {} -> {}, data needs {dim} -> {n_classes}",
                        t.input_dim(),
                        t.output_dim()
                    )));
                }
                true
            }
            (ScoreContext::Empty, kind) => kind.is_context_free() && !kind.needs_tail(),
            _ => false,
        };
        if !context_ok {
            return Err(CpError::invalid(format!(
                "score context does not fit {} scores",
                config.kind
            )));
        }
        Ok(Scorer {
            config,
            n_classes,
            dim,
            context,
        })
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.config
    }

    pub fn context(&self) -> &ScoreContext {
        &self.context
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.domain() != self.config.domain {
            return Err(CpError::DomainMismatch {
                expected: self.config.domain.to_string(),
                found: data.domain().to_string(),
            });
        }
        self.check_point(data.dim())?;
        if data.n_classes() != self.n_classes {
            return Err(CpError::invalid(format!(
                "dataset has {} classes, scorer expects {}",
                data.n_classes(),
                self.n_classes
            )));
        }
        Ok(())
    }

    fn check_point(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(CpError::DimensionMismatch {
                expected: self.dim,
                found: dim,
            });
        }
        Ok(())
    }

    fn u(&self, row_id: u64, class: usize) -> f64 {
        self.config.u_mode.value(row_id, class)
    }

    fn score_impl(
        &self,
        point: &[f64],
        row_id: u64,
        label: usize,
        calib_row: Option<usize>,
    ) -> Result<f64> {
        check_label(label, self.n_classes)?;
        let c = &self.config;
        match (&self.context, c.kind) {
            (_, ScoreKind::LabelDistance) => label_distance(point, label, c.metric),
            (_, ScoreKind::MarginDistance) => margin_distance(point, label, c.metric),
            (ScoreContext::Means(m), ScoreKind::MeanDistance) => {
                mean_distance(point, label, c.metric, m, calib_row.is_some())
            }
            (ScoreContext::Neighbors(d), ScoreKind::KnnRatio) => {
                knn_ratio(point, label, c.metric, d, calib_row)
            }
            (_, ScoreKind::Aps) => Ok(aps_score(point, label, self.u(row_id, label))),
            (_, ScoreKind::Raps) => Ok(raps_score(
                point,
                label,
                c.lambda,
                c.k_reg,
                self.u(row_id, label),
            )),
            (_, ScoreKind::Saps) => Ok(saps_score(point, label, c.lambda, self.u(row_id, label))),
            (ScoreContext::Tail(t), ScoreKind::Gradient) => {
                gradient_score(point, label, t, c.lr, c.steps)
            }
            (ScoreContext::Tail(t), ScoreKind::FastGradient) => {
                fast_gradient_score(point, label, t)
            }
            _ => unreachable!("context validated at construction"),
        }
    }

    /// Inference score of `point` for candidate `label`.
    pub fn score(&self, point: &[f64], row_id: u64, label: usize) -> Result<f64> {
        self.check_point(point.len())?;
        self.score_impl(point, row_id, label, None)
    }

    /// Inference scores of `point` for every candidate class.
    pub fn class_scores(&self, point: &[f64], row_id: u64) -> Result<Vec<f64>> {
        self.check_point(point.len())?;
        let c = &self.config;
        let classes = 0..self.n_classes;
        match (&self.context, c.kind) {
            (ScoreContext::Neighbors(d), ScoreKind::KnnRatio) => {
                let nearest = nearest_by_class(point, d, c.metric, None)?;
                classes.map(|y| ratio_from_nearest(&nearest, y)).collect()
            }
            (_, ScoreKind::Aps) => {
                let parts = ApsParts::new(point);
                Ok(classes
                    .map(|y| parts.mass_above(y) + self.u(row_id, y) * point[y])
                    .collect())
            }
            (_, ScoreKind::Raps) => {
                let parts = ApsParts::new(point);
                Ok(classes
                    .map(|y| {
                        raps_from_parts(
                            parts.mass_above(y),
                            self.u(row_id, y),
                            point[y],
                            rank(point, y),
                            c.lambda,
                            c.k_reg,
                        )
                    })
                    .collect())
            }
            (_, ScoreKind::Saps) => {
                let parts = ApsParts::new(point);
                Ok(classes
                    .map(|y| {
                        saps_from_parts(parts.max(), self.u(row_id, y), rank(point, y), c.lambda)
                    })
                    .collect())
            }
            _ => classes
                .map(|y| self.score_impl(point, row_id, y, None))
                .collect(),
        }
    }

    /// `class_scores` for every row of `data`, in row order.
    pub fn score_matrix(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.check_dataset(data)?;
        (0..data.len())
            .into_par_iter()
            .map(|i| self.class_scores(data.row(i), data.row_ids()[i]))
            .collect()
    }

    /// Inference scores of every row of `data` under its own label.
    pub fn true_label_scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(data)?;
        (0..data.len())
            .into_par_iter()
            .map(|i| self.score_impl(data.row(i), data.row_ids()[i], data.labels()[i], None))
            .collect()
    }
}
