//! Feature-space scores: distance from a feature vector to the set of
//! features the network tail maps onto the one-hot label.

use super::check_label;
use crate::distance::norm;
use crate::error::{CpError, Result};
use crate::nettail::NetworkTail;

fn one_hot(tail: &NetworkTail, label: usize) -> Result<Vec<f64>> {
    check_label(label, tail.output_dim())?;
    let mut target = vec![0.0; tail.output_dim()];
    target[label] = 1.0;
    Ok(target)
}

/// Runs `steps` iterations of gradient descent on `h(v)^2 / 2`, where
/// `h(v) = ||one_hot(label) - g(v)||`, starting from `feature`, and returns
/// how far the iterate travelled.
pub fn gradient_score(
    feature: &[f64],
    label: usize,
    tail: &NetworkTail,
    lr: f64,
    steps: usize,
) -> Result<f64> {
    let target = one_hot(tail, label)?;
    let mut v = feature.to_vec();
    for _ in 0..steps {
        let (h, grad) = tail.loss_grad(&v, &target)?;
        if h == 0.0 {
            break;
        }
        for (x, g) in v.iter_mut().zip(&grad) {
            *x -= lr * h * g;
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CpError::numeric(format!(
                "gradient descent diverged (lr = {lr})"
            )));
        }
    }
    let moved: Vec<f64> = v.iter().zip(feature).map(|(a, b)| a - b).collect();
    Ok(norm(&moved))
}

/// First-order estimate `h(v) / ||grad h(v)||` of the distance to the
/// zero set of `h`. Zero when `h = 0`; `+inf` when the gradient vanishes
/// elsewhere.
pub fn fast_gradient_score(feature: &[f64], label: usize, tail: &NetworkTail) -> Result<f64> {
    let target = one_hot(tail, label)?;
    let (h, grad) = tail.loss_grad(feature, &target)?;
    if h == 0.0 {
        return Ok(0.0);
    }
    let slope = norm(&grad);
    if slope == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(h / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nettail::Activation;

    /// Outputs (2v, 0).
    fn doubling() -> NetworkTail {
        NetworkTail::dense(2, 1, vec![2.0, 0.0], vec![0.0, 0.0], Activation::Identity).unwrap()
    }

    #[test]
    fn fixed_point_scores_zero() {
        let tail = doubling();
        assert_eq!(gradient_score(&[0.5], 0, &tail, 0.1, 100).unwrap(), 0.0);
        assert_eq!(fast_gradient_score(&[0.5], 0, &tail).unwrap(), 0.0);
    }

    #[test]
    fn zero_steps_score_zero() {
        assert_eq!(gradient_score(&[3.0], 0, &doubling(), 0.1, 0).unwrap(), 0.0);
    }

    #[test]
    fn scalar_doubling_tail() {
        // g(v) = 2v + 1 against target 1: h = |2v|, zero set {0}.
        // Descent on h^2/2 gives v <- 0.6 v, so the iterate travels to ~0.
        let tail = NetworkTail::dense(1, 1, vec![2.0], vec![1.0], Activation::Identity).unwrap();
        let s = gradient_score(&[1.0], 0, &tail, 0.1, 100).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
        assert_eq!(fast_gradient_score(&[1.0], 0, &tail).unwrap(), 1.0);
    }

    #[test]
    fn fast_gradient_on_scalar_lines() {
        // g(v) = a v + b against target 1 vanishes at v* = (1 - b) / a.
        for (a, b, v) in [
            (0.5, 0.5, 1.0),
            (3.0, -2.0, 0.25),
            (-10.0, 4.0, -7.5),
            (1e-3, 0.0, 2.0),
        ] {
            let tail = NetworkTail::dense(1, 1, vec![a], vec![b], Activation::Identity).unwrap();
            let s = fast_gradient_score(&[v], 0, &tail).unwrap();
            let exact = (v - (1.0 - b) / a).abs();
            assert!((s - exact).abs() < 1e-10, "{a} {b}: {s} vs {exact}");
        }
    }

    #[test]
    fn flat_direction_is_infinite() {
        let tail =
            NetworkTail::dense(2, 1, vec![0.0, 0.0], vec![0.0, 0.0], Activation::Identity).unwrap();
        assert_eq!(
            fast_gradient_score(&[1.0], 0, &tail).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn divergent_learning_rate_is_an_error() {
        let tail = NetworkTail::dense(1, 1, vec![10.0], vec![1.0], Activation::Identity).unwrap();
        assert!(gradient_score(&[1.0], 0, &tail, 10.0, 1000).is_err());
    }

    #[test]
    fn label_outside_output_space() {
        assert!(fast_gradient_score(&[1.0], 2, &doubling()).is_err());
    }
}
