//! The post-feature part of a classifier as a small chain of dense layers.
//!
//! Gradient-based scores need to push a feature vector through the rest of
//! the network and differentiate a residual with respect to that vector.
//! This module provides exactly that: a forward pass and a hand-written
//! backward pass, with no general autodiff machinery.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{CpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

/// Dense layer `y = act(W x + b)` with `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// `W^T delta`
    fn backprop_affine(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (w, d) in self.weights.chunks_exact(self.cols).zip(delta) {
            for (o, w) in out.iter_mut().zip(w) {
                *o += w * d;
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct TailFile {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TailFile")]
pub struct NetworkTail {
    layers: Vec<Layer>,
}

impl TryFrom<TailFile> for NetworkTail {
    type Error = CpError;

    fn try_from(file: TailFile) -> Result<Self> {
        NetworkTail::new(file.layers)
    }
}

impl NetworkTail {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CpError::invalid("network tail needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.rows == 0 || layer.cols == 0 {
                return Err(CpError::invalid(format!("layer {i} has a zero dimension")));
            }
            if layer.weights.len() != layer.rows * layer.cols {
                return Err(CpError::invalid(format!(
                    "layer {i}: {} weights for a {}x{} matrix",
                    layer.weights.len(),
                    layer.rows,
                    layer.cols
                )));
            }
            if layer.bias.len() != layer.rows {
                return Err(CpError::invalid(format!(
                    "layer {i}: bias has {} entries, expected {}",
                    layer.bias.len(),
                    layer.rows
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(CpError::invalid(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(CpError::invalid(format!(
                    "layer {i}: softmax is only allowed as the final activation"
                )));
            }
            if i > 0 && layers[i - 1].rows != layer.cols {
                return Err(CpError::invalid(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layer.cols,
                    i - 1,
                    layers[i - 1].rows
                )));
            }
        }
        Ok(NetworkTail { layers })
    }

    /// Single dense layer with the given weights.
    pub fn dense(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        NetworkTail::new(vec![Layer {
            rows,
            cols,
            weights,
            bias,
            activation,
        }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.input_dim() {
            return Err(CpError::DimensionMismatch {
                expected: self.input_dim(),
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(v)?;
        let mut x = v.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&x);
            x = activate(layer.activation, &z);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CpError::numeric(
                "network tail produced a non-finite output",
            ));
        }
        Ok(x)
    }

    /// Residual `h(v) = ||target - g(v)||_2` and its gradient with respect to
    /// `v`. At `h = 0` the (sub)gradient is taken as zero.
    pub fn loss_grad(&self, v: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(v)?;
        if target.len() != self.output_dim() {
            return Err(CpError::DimensionMismatch {
                expected: self.output_dim(),
                found: target.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut x = v.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&x);
            x = activate(layer.activation, &z);
            pre.push(z);
            post.push(x.clone());
        }
        let residual: Vec<f64> = x.iter().zip(target).map(|(g, t)| g - t).collect();
        let h = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        if !h.is_finite() {
            return Err(CpError::numeric("non-finite residual in network tail"));
        }
        if h == 0.0 {
            return Ok((0.0, vec![0.0; v.len()]));
        }
        let mut delta: Vec<f64> = residual.iter().map(|r| r / h).collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = match layer.activation {
                Activation::Identity => delta,
                Activation::Relu => delta
                    .iter()
                    .zip(&pre[i])
                    .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                    .collect(),
                Activation::Softmax => {
                    let s = &post[i];
                    let dot: f64 = s.iter().zip(&delta).map(|(s, d)| s * d).sum();
                    s.iter().zip(&delta).map(|(s, d)| s * (d - dot)).collect()
                }
            };
            delta = layer.backprop_affine(&dz);
        }
        if delta.iter().any(|g| !g.is_finite()) {
            return Err(CpError::numeric("non-finite gradient in network tail"));
        }
        Ok((h, delta))
    }
}

fn activate(activation: Activation, z: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Identity => z.to_vec(),
        Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
        Activation::Softmax => {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|v| v / total).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(w: f64) -> NetworkTail {
        NetworkTail::dense(1, 1, vec![w], vec![0.0], Activation::Identity).unwrap()
    }

    #[test]
    fn identity_tail_passes_input_through() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let tail = NetworkTail::dense(3, 3, eye, vec![0.0; 3], Activation::Identity).unwrap();
        let v = [0.25, -3.5, 1e-3];
        assert_eq!(tail.forward(&v).unwrap(), v.to_vec());
        assert_eq!(scalar(2.0).forward(&[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let tail = NetworkTail::dense(
            3,
            2,
            vec![1.0, -2.0, 0.5, 0.3, 2.0, 1.0],
            vec![0.1, 0.0, -0.4],
            Activation::Softmax,
        )
        .unwrap();
        let out = tail.forward(&[0.7, -1.1]).unwrap();
        assert_abs_diff_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_loss_and_gradient() {
        let (h, g) = scalar(2.0).loss_grad(&[1.0], &[0.0]).unwrap();
        assert_eq!(h, 2.0);
        assert_eq!(g, vec![2.0]);
        let (h, g) = scalar(2.0).loss_grad(&[0.5], &[1.0]).unwrap();
        assert_eq!((h, g), (0.0, vec![0.0]));
    }

    #[test]
    fn validation() {
        assert!(NetworkTail::new(vec![]).is_err());
        let softmax_first = Layer {
            rows: 2,
            cols: 2,
            weights: vec![1.0; 4],
            bias: vec![0.0; 2],
            activation: Activation::Softmax,
        };
        let second = Layer {
            activation: Activation::Identity,
            ..softmax_first.clone()
        };
        assert!(NetworkTail::new(vec![softmax_first, second.clone()]).is_err());
        let wide = Layer {
            rows: 2,
            cols: 3,
            weights: vec![0.0; 6],
            ..second.clone()
        };
        assert!(NetworkTail::new(vec![second.clone(), wide]).is_err());
        let bad = Layer {
            weights: vec![f64::NAN, 0.0, 0.0, 0.0],
            ..second
        };
        assert!(NetworkTail::new(vec![bad]).is_err());
        assert!(scalar(1.0).forward(&[1.0, 2.0]).is_err());
        assert!(scalar(1.0).loss_grad(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn json_format() {
        let text = r#"{"layers": [
            {"rows": 2, "cols": 1, "weights": [1.0, -1.0], "bias": [0.0, 0.5], "activation": "relu"},
            {"rows": 2, "cols": 2, "weights": [1, 0, 0, 1], "bias": [0, 0], "activation": "softmax"}
        ]}"#;
        let tail: NetworkTail = serde_json::from_str(text).unwrap();
        assert_eq!((tail.input_dim(), tail.output_dim()), (1, 2));
        let back: NetworkTail =
            serde_json::from_str(&serde_json::to_string(&tail).unwrap()).unwrap();
        assert_eq!(back, tail);
        let broken = r#"{"layers": [{"rows": 2, "cols": 1, "weights": [1.0], "bias": [0.0, 0.5], "activation": "relu"}]}"#;
        assert!(serde_json::from_str::<NetworkTail>(broken).is_err());
    }
}
