//! Adam optimizer with bias correction.

use ndarray::{Array1, Array2};

use crate::backprop::Gradients;
use crate::error::{Error, Result};
use crate::network::Network;

/// Adam hyperparameters. Defaults are the conventional
/// `lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Self::default() }
    }
}

/// First/second moment estimates for every parameter, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    t: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    /// Fresh state (zero moments, step counter 0) shaped like `net`.
    pub fn new(net: &Network, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            t: 0,
            m_w: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update `p += -lr * m_hat / (sqrt(v_hat) + eps)` to every
    /// parameter of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != net.layers.len() || grads.biases.len() != net.layers.len() {
            return Err(Error::ShapeMismatch {
                context: "adam step",
                expected: format!("{} layer gradients", net.layers.len()),
                found: format!("{}w/{}b", grads.weights.len(), grads.biases.len()),
            });
        }
        for (l, layer) in net.layers.iter().enumerate() {
            if grads.weights[l].dim() != layer.weights.dim() || grads.biases[l].len() != layer.bias.len() {
                return Err(Error::ShapeMismatch {
                    context: "adam step",
                    expected: format!("layer {l} gradient {:?}", layer.weights.dim()),
                    found: format!("{:?}", grads.weights[l].dim()),
                });
            }
        }

        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);

        for (l, layer) in net.layers.iter_mut().enumerate() {
            update(
                layer.weights.as_slice_mut().unwrap(),
                grads.weights[l].as_slice().unwrap(),
                self.m_w[l].as_slice_mut().unwrap(),
                self.v_w[l].as_slice_mut().unwrap(),
                h,
                bc1,
                bc2,
            );
            update(
                layer.bias.as_slice_mut().unwrap(),
                grads.biases[l].as_slice().unwrap(),
                self.m_b[l].as_slice_mut().unwrap(),
                self.v_b[l].as_slice_mut().unwrap(),
                h,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], h: AdamHyper, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}
