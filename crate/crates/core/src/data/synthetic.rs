//! Synthetic classifier outputs with a controllable top-1 accuracy.
//!
//! Logits are `signal * one_hot(label) + noise_temperature * z` with `z`
//! standard normal. The signal is solved on the drawn noise so that, at
//! unit temperature, the realized accuracy of the sample equals the target
//! up to one example. Lower temperatures make the classifier sharper.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DomainTag};
use crate::error::{CpError, Result};
use crate::nettail::{Activation, NetworkTail};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub n_classes: usize,
    pub accuracy_target: f64,
    #[serde(default = "default_temperature")]
    pub noise_temperature: f64,
    /// When set, also emit feature vectors of this width together with a
    /// network tail mapping them back to the class probabilities.
    #[serde(default)]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub logits: Dataset,
    pub features: Option<Dataset>,
    pub tail: Option<NetworkTail>,
}

impl SyntheticData {
    /// The dataset as seen in `domain`.
    pub fn view(&self, domain: DomainTag) -> Result<Dataset> {
        match domain {
            DomainTag::Logit => Ok(self.logits.clone()),
            DomainTag::Probability => self.logits.to_probabilities(),
            DomainTag::Feature => self.features.clone().ok_or_else(|| {
                CpError::invalid("feature view requested but feature_dim was not set")
            }),
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let k = spec.n_classes;
    if k < 2 {
        return Err(CpError::invalid(
            "synthetic data needs at least two classes",
        ));
    }
    if spec.n < k {
        return Err(CpError::invalid(format!(
            "n = {} is smaller than n_classes = {k}",
            spec.n
        )));
    }
    let chance = 1.0 / k as f64;
    if !(spec.accuracy_target > chance && spec.accuracy_target < 1.0) {
        return Err(CpError::invalid(format!(
            "accuracy_target {} outside ({chance}, 1)",
            spec.accuracy_target
        )));
    }
    if !(spec.noise_temperature >= 0.0 && spec.noise_temperature.is_finite()) {
        return Err(CpError::invalid(
            "noise_temperature must be a non-negative finite number",
        ));
    }
    if let Some(d) = spec.feature_dim {
        if d < k {
            return Err(CpError::invalid(format!(
                "feature_dim {d} must be at least n_classes {k}"
            )));
        }
    }

    let mut label_rng = rng::stream(spec.seed, rng::STREAM_SYNTH_LABELS);
    let labels: Vec<usize> = (0..spec.n).map(|_| label_rng.gen_range(0..k)).collect();
    let mut noise_rng = rng::stream(spec.seed, rng::STREAM_SYNTH_NOISE);
    let noise: Vec<f64> = (0..spec.n * k)
        .map(|_| noise_rng.sample(StandardNormal))
        .collect();

    let signal = solve_signal(&noise, &labels, k, spec.accuracy_target);
    let mut logits = noise;
    for (row, &y) in logits.chunks_exact_mut(k).zip(&labels) {
        for v in row.iter_mut() {
            *v *= spec.noise_temperature;
        }
        row[y] += signal;
    }
    let logit_ds = Dataset::new(logits, k, labels.clone(), DomainTag::Logit, k)?;

    let (features, tail) = match spec.feature_dim {
        None => (None, None),
        Some(d) => {
            let (f, t) = embed_features(&logit_ds, d, spec.seed)?;
            (Some(f), Some(t))
        }
    };
    Ok(SyntheticData {
        logits: logit_ds,
        features,
        tail,
    })
}

/// Smallest signal strength whose realized accuracy on unit-temperature
/// logits reaches `round(target * n) / n`.
///
/// Row `i` is classified correctly iff `signal > margin_i` where
/// `margin_i = max_{j != y} z_j - z_y`, so accuracy is a non-decreasing step
/// function of the signal and the solution is a midpoint between two
/// consecutive sorted margins.
fn solve_signal(noise: &[f64], labels: &[usize], k: usize, target: f64) -> f64 {
    let mut margins: Vec<f64> = noise
        .chunks_exact(k)
        .zip(labels)
        .map(|(z, &y)| {
            let rival = z
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            rival - z[y]
        })
        .collect();
    margins.sort_by(f64::total_cmp);
    let n = margins.len();
    let hits = ((target * n as f64).round() as usize).min(n);
    match hits {
        0 => margins[0] - 1.0,
        h if h == n => margins[n - 1] + 1.0,
        h => 0.5 * (margins[h - 1] + margins[h]),
    }
}

/// Embeds logits into `d` dimensions through a random matrix `M` with
/// orthonormal columns, adds noise orthogonal to its range, and returns the
/// tail `softmax(M^T v)` that recovers the class probabilities.
fn embed_features(logits: &Dataset, d: usize, seed: u64) -> Result<(Dataset, NetworkTail)> {
    let k = logits.n_classes();
    let mut rng = rng::stream(seed, rng::STREAM_SYNTH_FEATURES);
    // columns of M, each of length d
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }

    let mut points = Vec::with_capacity(logits.len() * d);
    for row in logits.rows() {
        let mut extra: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = extra.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in extra.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        for i in 0..d {
            let embedded: f64 = basis.iter().zip(row).map(|(b, l)| b[i] * l).sum();
            points.push(embedded + extra[i]);
        }
    }
    let features = Dataset::new(points, d, logits.labels().to_vec(), DomainTag::Feature, k)?;
    let weights: Vec<f64> = basis.iter().flat_map(|b| b.iter().copied()).collect();
    let tail = NetworkTail::dense(k, d, weights, vec![0.0; k], Activation::Softmax)?;
    Ok((features, tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, k: usize, target: f64, temp: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n,
            n_classes: k,
            accuracy_target: target,
            noise_temperature: temp,
            feature_dim: None,
            seed,
        }
    }

    fn accuracy(ds: &Dataset) -> f64 {
        let hits = ds
            .rows()
            .zip(ds.labels())
            .filter(|(row, &y)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
                best == y
            })
            .count();
        hits as f64 / ds.len() as f64
    }

    #[test]
    fn hits_accuracy_target() {
        let data = generate_synthetic(&spec(10_000, 10, 0.9, 1.0, 7)).unwrap();
        let probs = data.view(DomainTag::Probability).unwrap();
        let acc = accuracy(&probs);
        assert!((0.88..=0.92).contains(&acc), "accuracy {acc}");
        let counts = data.logits.class_counts();
        assert!(
            counts.iter().all(|&c| (850..1150).contains(&c)),
            "{counts:?}"
        );
    }

    #[test]
    fn zero_temperature_is_perfect() {
        let data = generate_synthetic(&spec(2_000, 5, 0.6, 1e-9, 1)).unwrap();
        assert_eq!(accuracy(&data.logits), 1.0);
        let data = generate_synthetic(&spec(2_000, 5, 0.6, 0.0, 1)).unwrap();
        assert_eq!(accuracy(&data.logits), 1.0);
    }

    #[test]
    fn deterministic() {
        let mut s = spec(500, 4, 0.7, 1.0, 3);
        s.feature_dim = Some(6);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
        assert_eq!(a.tail, b.tail);
        let bits = |d: &Dataset| d.points().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.logits), bits(&b.logits));
    }

    #[test]
    fn tail_recovers_probabilities() {
        let mut s = spec(50, 4, 0.7, 1.0, 11);
        s.feature_dim = Some(9);
        let data = generate_synthetic(&s).unwrap();
        let probs = data.view(DomainTag::Probability).unwrap();
        let features = data.view(DomainTag::Feature).unwrap();
        let tail = data.tail.as_ref().unwrap();
        for (f, p) in features.rows().zip(probs.rows()) {
            let out = tail.forward(f).unwrap();
            for (a, b) in out.iter().zip(p) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_unachievable_targets() {
        assert!(generate_synthetic(&spec(100, 10, 0.1, 1.0, 0)).is_err());
        assert!(generate_synthetic(&spec(100, 10, 0.05, 1.0, 0)).is_err());
        assert!(generate_synthetic(&spec(100, 10, 1.0, 1.0, 0)).is_err());
        assert!(generate_synthetic(&spec(5, 10, 0.5, 1.0, 0)).is_err());
        let mut s = spec(100, 10, 0.5, 1.0, 0);
        s.feature_dim = Some(3);
        assert!(generate_synthetic(&s).is_err());
        assert!(generate_synthetic(&spec(100, 10, 0.5, 1.0, 0))
            .unwrap()
            .view(DomainTag::Feature)
            .is_err());
    }
}
