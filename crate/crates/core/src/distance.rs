use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance(self, u: &[f64], v: &[f64]) -> Result<f64> {
        match self {
            Metric::Euclidean => euclidean(u, v),
            Metric::Cosine => cosine_distance(u, v),
        }
    }
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(CpError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn squared_euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    u.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn euclidean(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(squared_euclidean(u, v).sqrt())
}

/// `1 - cos(u, v)`. Zero vectors have no direction and are rejected.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(CpError::invalid("cosine distance of a zero-norm vector"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}
