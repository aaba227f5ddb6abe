//! JSON run configuration shared by the command-line front end.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::CalibrationMode;
use crate::data::{
    generate_synthetic, load_dataset, make_imbalanced, split, DataFormat, Dataset, DomainTag,
    SplitSpec, SyntheticSpec,
};
use crate::error::{CpError, Result};
use crate::nettail::NetworkTail;
use crate::scores::ScoreConfig;

/// Where the examples come from. Exactly one source per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// One labelled file that is split into calibration and test parts.
    Pool {
        path: PathBuf,
        #[serde(default)]
        n_classes: Option<usize>,
    },
    /// Calibration and test sets given separately; the split is fixed.
    Split {
        calib: PathBuf,
        test: PathBuf,
        #[serde(default)]
        n_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Imbalance {
    pub minority_classes: BTreeSet<usize>,
    pub keep_fraction: f64,
}

/// Settings of the repeated-split coverage experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSettings {
    pub n_calib: usize,
    pub test_size: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Error rates to check; the run's `alpha` when empty.
    #[serde(default)]
    pub alphas: Vec<f64>,
}

fn default_trials() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub score: ScoreConfig,
    #[serde(default)]
    pub mode: CalibrationMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_calib_fraction")]
    pub calib_fraction: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_format")]
    pub format: DataFormat,
    /// Network tail for gradient scores or feature-domain accuracy.
    #[serde(default)]
    pub tail: Option<PathBuf>,
    /// Predictor artifact used by `predict`; calibrated on the fly otherwise.
    #[serde(default)]
    pub predictor: Option<PathBuf>,
    #[serde(default)]
    pub imbalance: Option<Imbalance>,
    #[serde(default)]
    pub coverage: Option<CoverageSettings>,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_grid_points() -> usize {
    50
}
fn default_k() -> usize {
    1
}
fn default_calib_fraction() -> f64 {
    0.5
}
fn default_repetitions() -> usize {
    100
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_format() -> DataFormat {
    DataFormat::Binary
}

/// Examples and tail resolved from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct RunData {
    source: Source,
    tail: Option<Arc<NetworkTail>>,
}

#[derive(Debug, Clone)]
enum Source {
    Pool(Dataset),
    Fixed(Dataset, Dataset),
}

impl RunData {
    pub fn tail(&self) -> Option<Arc<NetworkTail>> {
        self.tail.clone()
    }

    /// Calibration and test sets for the randomization `seed`.
    pub fn split(&self, calib_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        match &self.source {
            Source::Pool(pool) => split(
                pool,
                SplitSpec {
                    calib_fraction,
                    seed,
                },
            ),
            Source::Fixed(calib, test) => Ok((calib.clone(), test.clone())),
        }
    }

    /// The whole pool, if the source is not pre-split.
    pub fn pool(&self) -> Option<&Dataset> {
        match &self.source {
            Source::Pool(pool) => Some(pool),
            Source::Fixed(..) => None,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        Ok(config)
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output
    /// directory.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("run config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CpError::invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.grid_points < 2 {
            return Err(CpError::invalid("grid_points must be at least 2"));
        }
        if self.k == 0 {
            return Err(CpError::invalid("k must be at least 1"));
        }
        if !(self.calib_fraction > 0.0 && self.calib_fraction < 1.0) {
            return Err(CpError::invalid(format!(
                "calib_fraction must lie in (0, 1), got {}",
                self.calib_fraction
            )));
        }
        if self.repetitions == 0 {
            return Err(CpError::invalid("repetitions must be at least 1"));
        }
        if let Some(imb) = &self.imbalance {
            if !(imb.keep_fraction > 0.0 && imb.keep_fraction <= 1.0) {
                return Err(CpError::invalid(format!(
                    "keep_fraction must lie in (0, 1], got {}",
                    imb.keep_fraction
                )));
            }
        }
        if let Some(cov) = &self.coverage {
            if cov.n_calib == 0 || cov.test_size == 0 {
                return Err(CpError::invalid(
                    "coverage n_calib and test_size must be positive",
                ));
            }
            if let Some(a) = cov.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
                return Err(CpError::invalid(format!(
                    "coverage alpha must lie in (0, 1), got {a}"
                )));
            }
        }
        match &self.data {
            DataSource::Synthetic(spec) => {
                if self.score.domain == DomainTag::Feature && spec.feature_dim.is_none() {
                    return Err(CpError::invalid(
                        "feature-domain scores need synthetic feature_dim",
                    ));
                }
            }
            DataSource::Pool { path, .. } => require_file(path)?,
            DataSource::Split { calib, test, .. } => {
                require_file(calib)?;
                require_file(test)?;
            }
        }
        let synthetic_tail =
            matches!(&self.data, DataSource::Synthetic(s) if s.feature_dim.is_some());
        if self.score.kind.needs_tail() && self.tail.is_none() && !synthetic_tail {
            return Err(CpError::invalid(format!(
                "{} scores need a network tail",
                self.score.kind
            )));
        }
        for path in self.tail.iter().chain(&self.predictor) {
            require_file(path)?;
        }
        Ok(())
    }

    /// Loads or generates the examples in the score's domain and applies
    /// the configured imbalance.
    pub fn load_data(&self) -> Result<RunData> {
        let domain = self.score.domain;
        let mut tail = match &self.tail {
            Some(path) => Some(Arc::new(NetworkTail::load(path)?)),
            None => None,
        };
        let source = match &self.data {
            DataSource::Synthetic(spec) => {
                let synth = generate_synthetic(spec)?;
                if tail.is_none() {
                    tail = synth.tail.clone().map(Arc::new);
                }
                Source::Pool(synth.view(domain)?)
            }
            DataSource::Pool { path, n_classes } => Source::Pool(load_dataset(
                path,
                DataFormat::from_path(path)?,
                domain,
                *n_classes,
            )?),
            DataSource::Split {
                calib,
                test,
                n_classes,
            } => {
                let calib = load_dataset(calib, DataFormat::from_path(calib)?, domain, *n_classes)?;
                let test = load_dataset(
                    test,
                    DataFormat::from_path(test)?,
                    domain,
                    Some(calib.n_classes()),
                )?;
                Source::Fixed(calib, test)
            }
        };
        let source = match (&self.imbalance, source) {
            (None, s) => s,
            (Some(imb), Source::Pool(pool)) => Source::Pool(make_imbalanced(
                &pool,
                &imb.minority_classes,
                imb.keep_fraction,
                self.seed,
            )?),
            (Some(imb), Source::Fixed(calib, test)) => Source::Fixed(
                make_imbalanced(&calib, &imb.minority_classes, imb.keep_fraction, self.seed)?,
                make_imbalanced(
                    &test,
                    &imb.minority_classes,
                    imb.keep_fraction,
                    self.seed ^ 1,
                )?,
            ),
        };
        Ok(RunData { source, tail })
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CpError::invalid(format!(
            "{} does not exist",
            path.display()
        )))
    }
}
