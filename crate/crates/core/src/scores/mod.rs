//! Non-conformity score functions.
//!
//! Every score maps a point, a candidate label and (optionally) statistics
//! of the calibration set to a real number; lower means more conforming.
//! [`Scorer`] wraps a [`ScoreConfig`] together with the context it needs so
//! that calibration and prediction can treat all kinds uniformly.

pub(crate) mod aps;
mod context;
mod distance_based;
mod gradient;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::DomainTag;
use crate::distance::Metric;
use crate::error::{CpError, Result};
use crate::rng;

pub use aps::{aps_score, aps_tau_naive, descending_order, raps_score, saps_score, ApsParts};
pub use context::{ScoreContext, Scorer};
pub use distance_based::{
    knn_ratio, label_distance, margin_distance, margin_distance_full, mean_distance,
    nearest_by_class, ratio_from_nearest, ClassMeans,
};
pub use gradient::{fast_gradient_score, gradient_score};

/// Tie-break value used by the APS family when nothing else is configured.
pub const DEFAULT_U: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    LabelDistance,
    MarginDistance,
    MeanDistance,
    KnnRatio,
    Aps,
    Raps,
    Saps,
    Gradient,
    FastGradient,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 9] = [
        ScoreKind::LabelDistance,
        ScoreKind::MarginDistance,
        ScoreKind::MeanDistance,
        ScoreKind::KnnRatio,
        ScoreKind::Aps,
        ScoreKind::Raps,
        ScoreKind::Saps,
        ScoreKind::Gradient,
        ScoreKind::FastGradient,
    ];

    pub fn is_aps_family(self) -> bool {
        matches!(self, ScoreKind::Aps | ScoreKind::Raps | ScoreKind::Saps)
    }

    pub fn needs_tail(self) -> bool {
        matches!(self, ScoreKind::Gradient | ScoreKind::FastGradient)
    }

    /// Scores of these kinds do not depend on the calibration set.
    pub fn is_context_free(self) -> bool {
        !matches!(self, ScoreKind::MeanDistance | ScoreKind::KnnRatio)
    }

    pub fn allowed_domains(self) -> &'static [DomainTag] {
        use DomainTag::*;
        match self {
            ScoreKind::LabelDistance => &[Probability],
            ScoreKind::MarginDistance | ScoreKind::Aps | ScoreKind::Raps | ScoreKind::Saps => {
                &[Probability, Logit]
            }
            ScoreKind::MeanDistance | ScoreKind::KnnRatio => &[Probability, Logit, Feature],
            ScoreKind::Gradient | ScoreKind::FastGradient => &[Feature],
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Source of the tie-break variable `u` in the APS family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMode {
    Constant(f64),
    Random { seed: u64 },
}

impl Default for UMode {
    fn default() -> Self {
        UMode::Constant(DEFAULT_U)
    }
}

impl UMode {
    pub fn value(&self, row_id: u64, class: usize) -> f64 {
        match *self {
            UMode::Constant(u) => u,
            UMode::Random { seed } => rng::uniform_at(seed, row_id, class),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    pub domain: DomainTag,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub u_mode: UMode,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_k_reg")]
    pub k_reg: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_lambda() -> f64 {
    0.2
}
fn default_k_reg() -> usize {
    1
}
fn default_lr() -> f64 {
    0.1
}
fn default_steps() -> usize {
    100
}

impl ScoreConfig {
    pub fn new(kind: ScoreKind, domain: DomainTag) -> Self {
        ScoreConfig {
            kind,
            domain,
            metric: Metric::default(),
            u_mode: UMode::default(),
            lambda: default_lambda(),
            k_reg: default_k_reg(),
            lr: default_lr(),
            steps: default_steps(),
        }
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_u(mut self, u_mode: UMode) -> Self {
        self.u_mode = u_mode;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kind.allowed_domains().contains(&self.domain) {
            return Err(CpError::invalid(format!(
                "{} scores cannot be computed in the {} domain",
                self.kind, self.domain
            )));
        }
        if let UMode::Constant(u) = self.u_mode {
            if !(u > 0.0 && u <= 1.0) {
                return Err(CpError::invalid(format!(
                    "constant u must lie in (0, 1], got {u}"
                )));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CpError::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.k_reg == 0 {
            return Err(CpError::invalid("k_reg must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CpError::invalid(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.steps == 0 {
            return Err(CpError::invalid("steps must be at least 1"));
        }
        Ok(())
    }
}

/// 1-based rank of `label` in descending order of `values`; ties go to the
/// lower class index.
pub fn rank(values: &[f64], label: usize) -> usize {
    let v = values[label];
    1 + values
        .iter()
        .enumerate()
        .filter(|&(j, &w)| w > v || (w == v && j < label))
        .count()
}

pub(crate) fn check_label(label: usize, n: usize) -> Result<()> {
    if label >= n {
        return Err(CpError::invalid(format!(
            "label {label} out of range for {n} classes"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_breaks_ties_by_index() {
        let v = [0.2, 0.5, 0.2, 0.1];
        assert_eq!(rank(&v, 1), 1);
        assert_eq!(rank(&v, 0), 2);
        assert_eq!(rank(&v, 2), 3);
        assert_eq!(rank(&v, 3), 4);
    }

    #[test]
    fn config_domain_rules() {
        use DomainTag::*;
        for kind in ScoreKind::ALL {
            for domain in [Probability, Logit, Feature] {
                let ok = ScoreConfig::new(kind, domain).validate().is_ok();
                assert_eq!(
                    ok,
                    kind.allowed_domains().contains(&domain),
                    "{kind} {domain}"
                );
            }
        }
        assert!(ScoreConfig::new(ScoreKind::LabelDistance, Logit)
            .validate()
            .is_err());
        assert!(ScoreConfig::new(ScoreKind::Gradient, Probability)
            .validate()
            .is_err());
    }

    #[test]
    fn config_parameter_rules() {
        let base = ScoreConfig::new(ScoreKind::Raps, DomainTag::Probability);
        assert!(base
            .clone()
            .with_u(UMode::Constant(0.0))
            .validate()
            .is_err());
        assert!(base.clone().with_u(UMode::Constant(1.0)).validate().is_ok());
        assert!(base.clone().with_lambda(-0.1).validate().is_err());
        assert!(ScoreConfig {
            k_reg: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(ScoreConfig {
            lr: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(ScoreConfig { steps: 0, ..base }.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ScoreConfig =
            serde_json::from_str(r#"{"kind": "saps", "domain": "probability"}"#).unwrap();
        assert_eq!(cfg.u_mode, UMode::Constant(0.001));
        assert_eq!(
            (cfg.lambda, cfg.k_reg, cfg.lr, cfg.steps),
            (0.2, 1, 0.1, 100)
        );
        let cfg: ScoreConfig = serde_json::from_str(
            r#"{"kind": "aps", "domain": "logit", "u_mode": {"random": {"seed": 4}}, "metric": "cosine"}"#,
        )
        .unwrap();
        assert_eq!(cfg.u_mode, UMode::Random { seed: 4 });
        assert_eq!(cfg.metric, Metric::Cosine);
        assert!(serde_json::from_str::<ScoreConfig>(
            r#"{"kind": "aps", "domain": "logit", "bogus": 1}"#
        )
        .is_err());
    }

    #[test]
    fn random_u_is_reproducible() {
        let mode = UMode::Random { seed: 9 };
        assert_eq!(mode.value(3, 1), mode.value(3, 1));
        assert_ne!(mode.value(3, 1), mode.value(3, 2));
        assert_eq!(UMode::default().value(5, 5), DEFAULT_U);
    }
}
