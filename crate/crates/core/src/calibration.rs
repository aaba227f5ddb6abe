//! Thresholds from calibration scores, marginal or per class (Mondrian).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, save_dataset, write_atomic, DataFormat, Dataset};
use crate::error::{CpError, Result};
use crate::nettail::NetworkTail;
use crate::scores::{ClassMeans, ScoreConfig, ScoreContext, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    #[default]
    Marginal,
    Mondrian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thresholds {
    Marginal(#[serde(with = "json_float")] f64),
    Mondrian(#[serde(with = "json_float::vec")] Vec<f64>),
}

impl Thresholds {
    pub fn for_class(&self, class: usize) -> f64 {
        match self {
            Thresholds::Marginal(t) => *t,
            Thresholds::Mondrian(ts) => ts[class],
        }
    }
}

/// Index `k = ceil((n + 1)(1 - alpha))` of the calibration order statistic,
/// computed as `n + 1 - floor((n + 1) alpha)` with a small guard against
/// products that should be integers landing just below one.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let tail = ((n + 1) as f64 * alpha + 1e-9).floor() as usize;
    n + 1 - tail.min(n + 1)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CpError::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// The `ceil((n + 1)(1 - alpha))`-th smallest score, or `+inf` when that
/// index exceeds `n`.
pub fn finite_sample_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(CpError::invalid("quantile of an empty score set"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CpError::numeric("calibration scores contain NaN"));
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// The k-th order statistic from an already sorted slice.
pub(crate) fn sorted_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let k = quantile_rank(sorted.len(), alpha);
    if k > sorted.len() {
        f64::INFINITY
    } else {
        sorted[k - 1]
    }
}

/// Calibration scores of one calibration set. Scores do not depend on
/// `alpha`, so one instance yields predictors for any number of error
/// rates.
#[derive(Debug, Clone)]
pub struct CalibrationScores {
    scorer: Scorer,
    scores: Vec<f64>,
    sorted: Vec<f64>,
    sorted_by_class: Vec<Vec<f64>>,
}

impl CalibrationScores {
    pub fn compute(
        calib: &Dataset,
        config: &ScoreConfig,
        tail: Option<Arc<NetworkTail>>,
    ) -> Result<Self> {
        let (scorer, scores) = Scorer::fit(config, calib, tail)?;
        if scores.iter().any(|s| s.is_nan()) {
            return Err(CpError::numeric("calibration scores contain NaN"));
        }
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let mut sorted_by_class = vec![Vec::new(); calib.n_classes()];
        for (&s, &y) in scores.iter().zip(calib.labels()) {
            sorted_by_class[y].push(s);
        }
        for class in &mut sorted_by_class {
            class.sort_by(f64::total_cmp);
        }
        Ok(CalibrationScores {
            scorer,
            scores,
            sorted,
            sorted_by_class,
        })
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    /// True-label calibration scores in row order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn thresholds(&self, mode: CalibrationMode, alpha: f64) -> Result<Thresholds> {
        check_alpha(alpha)?;
        match mode {
            CalibrationMode::Marginal => {
                Ok(Thresholds::Marginal(sorted_quantile(&self.sorted, alpha)))
            }
            CalibrationMode::Mondrian => {
                if let Some(c) = self.sorted_by_class.iter().position(Vec::is_empty) {
                    return Err(CpError::MissingClass(c));
                }
                Ok(Thresholds::Mondrian(
                    self.sorted_by_class
                        .iter()
                        .map(|s| sorted_quantile(s, alpha))
                        .collect(),
                ))
            }
        }
    }

    pub fn predictor(&self, mode: CalibrationMode, alpha: f64) -> Result<CalibratedPredictor> {
        Ok(CalibratedPredictor {
            scorer: self.scorer.clone(),
            alpha,
            mode,
            thresholds: self.thresholds(mode, alpha)?,
            n_calib: self.scores.len(),
        })
    }
}

/// Scores `calib` under `config` and extracts the threshold(s) for `alpha`.
pub fn calibrate(
    calib: &Dataset,
    config: &ScoreConfig,
    tail: Option<Arc<NetworkTail>>,
    mode: CalibrationMode,
    alpha: f64,
) -> Result<CalibratedPredictor> {
    CalibrationScores::compute(calib, config, tail)?.predictor(mode, alpha)
}

#[derive(Debug, Clone)]
pub struct CalibratedPredictor {
    scorer: Scorer,
    alpha: f64,
    mode: CalibrationMode,
    thresholds: Thresholds,
    n_calib: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ContextFile {
    None,
    Means(ClassMeans),
    CalibrationFile(PathBuf),
    TailFile(PathBuf),
}

#[derive(Serialize, Deserialize)]
struct PredictorFile {
    config: ScoreConfig,
    mode: CalibrationMode,
    alpha: f64,
    n_calib: usize,
    n_classes: usize,
    dim: usize,
    thresholds: Thresholds,
    context: ContextFile,
}

impl CalibratedPredictor {
    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    pub fn config(&self) -> &ScoreConfig {
        self.scorer.config()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn threshold_for(&self, class: usize) -> f64 {
        self.thresholds.for_class(class)
    }

    pub fn n_calib(&self) -> usize {
        self.n_calib
    }

    pub fn n_classes(&self) -> usize {
        self.scorer.n_classes()
    }

    /// Writes the predictor as JSON. Calibration points (nearest-neighbour
    /// scores) and network tails go to sibling files named after `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("predictor")
            .to_string();
        let dir = path.parent().unwrap_or(Path::new(""));
        let context = match self.scorer.context() {
            ScoreContext::Empty => ContextFile::None,
            ScoreContext::Means(m) => ContextFile::Means(m.clone()),
            ScoreContext::Neighbors(d) => {
                let name = PathBuf::from(format!("{stem}.calibration.cpmx"));
                save_dataset(d, &dir.join(&name), DataFormat::Binary)?;
                ContextFile::CalibrationFile(name)
            }
            ScoreContext::Tail(t) => {
                let name = PathBuf::from(format!("{stem}.tail.json"));
                t.save(&dir.join(&name))?;
                ContextFile::TailFile(name)
            }
        };
        let file = PredictorFile {
            config: self.config().clone(),
            mode: self.mode,
            alpha: self.alpha,
            n_calib: self.n_calib,
            n_classes: self.scorer.n_classes(),
            dim: self.scorer.dim(),
            thresholds: self.thresholds.clone(),
            context,
        };
        let mut bytes = serde_json::to_vec_pretty(&file)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: PredictorFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let context = match file.context {
            ContextFile::None => ScoreContext::Empty,
            ContextFile::Means(m) => ScoreContext::Means(m),
            ContextFile::CalibrationFile(p) => ScoreContext::Neighbors(Arc::new(load_dataset(
                &dir.join(p),
                DataFormat::Binary,
                file.config.domain,
                Some(file.n_classes),
            )?)),
            ContextFile::TailFile(p) => {
                ScoreContext::Tail(Arc::new(NetworkTail::load(&dir.join(p))?))
            }
        };
        check_alpha(file.alpha)?;
        match &file.thresholds {
            Thresholds::Mondrian(ts) if ts.len() != file.n_classes => {
                return Err(CpError::Format {
                    path: path.to_path_buf(),
                    message: format!("{} thresholds for {} classes", ts.len(), file.n_classes),
                });
            }
            Thresholds::Marginal(_) if file.mode == CalibrationMode::Mondrian => {
                return Err(CpError::Format {
                    path: path.to_path_buf(),
                    message: "mondrian predictor with a single threshold".into(),
                });
            }
            _ => {}
        }
        Ok(CalibratedPredictor {
            scorer: Scorer::from_parts(file.config, file.n_classes, file.dim, context)?,
            alpha: file.alpha,
            mode: file.mode,
            thresholds: file.thresholds,
            n_calib: file.n_calib,
        })
    }
}

/// JSON has no infinities; `+inf`/`-inf` are written as the strings
/// `"inf"`/`"-inf"`.
pub mod json_float {
    use serde::de::Error as _;
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    fn to_repr(v: f64) -> Option<Repr> {
        if v.is_finite() {
            Some(Repr::Num(v))
        } else if v == f64::INFINITY {
            Some(Repr::Str("inf".into()))
        } else if v == f64::NEG_INFINITY {
            Some(Repr::Str("-inf".into()))
        } else {
            None
        }
    }

    fn from_repr(r: Repr) -> Result<f64, String> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(format!("invalid number '{s}'")),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v)
            .ok_or_else(|| S::Error::custom("NaN"))?
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?).map_err(D::Error::custom)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter()
                .map(|&x| to_repr(x).ok_or_else(|| S::Error::custom("NaN")))
                .collect::<Result<Vec<_>, _>>()?
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(|r| from_repr(r).map_err(D::Error::custom))
                .collect()
        }
    }
}
