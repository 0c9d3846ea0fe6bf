//! Exact analytic gradients via manual backpropagation.
//!
//! Parameter gradients drive training (softmax cross-entropy, mean over the
//! batch); input gradients drive the attacks and sensitivity analysis and are
//! summed over the batch, so each row of the result is the gradient for that
//! sample alone.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::network::{ForwardTrace, Network};

/// What the input gradient differentiates.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Softmax cross-entropy against these labels, summed over the batch.
    CrossEntropy(&'a [u8]),
    /// The raw logit of one class, summed over the batch.
    Logit(usize),
}

/// Per-layer parameter gradients, shaped like the network's weights and biases.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Row-wise softmax, stabilized by subtracting the row max.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

fn check_labels(labels: &[u8], n: usize, num_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: "labels",
            expected: format!("{n} labels"),
            found: format!("{}", labels.len()),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
        return Err(Error::InvalidClass {
            class: l as usize,
            num_classes,
        });
    }
    Ok(())
}

/// Mean softmax cross-entropy of `logits` against `labels`, computed through
/// log-sum-exp so large logits cannot overflow.
pub fn cross_entropy_loss(logits: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    if logits.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (row, &label) in logits.axis_iter(Axis(0)).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label as usize];
    }
    Ok(total / logits.nrows() as f64)
}

/// `softmax(logits) - onehot(labels)`: the gradient of summed cross-entropy
/// with respect to the logits.
fn softmax_minus_onehot(logits: &Array2<f64>, labels: &[u8]) -> Array2<f64> {
    let mut delta = softmax(logits);
    for (i, &label) in labels.iter().enumerate() {
        delta[(i, label as usize)] -= 1.0;
    }
    delta
}

/// Backpropagates `delta` (the objective's gradient at the final layer's
/// post-activation) down the network. Returns parameter gradients and/or the
/// gradient with respect to the input rows.
fn backward(
    net: &Network,
    x: &Array2<f64>,
    trace: &ForwardTrace,
    mut delta: Array2<f64>,
    want_params: bool,
    want_input: bool,
) -> (Option<Gradients>, Option<Array2<f64>>) {
    let layer_count = net.layers.len();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut input_grad = None;

    for l in (0..layer_count).rev() {
        let layer = &net.layers[l];
        delta.zip_mut_with(&trace.pre[l], |d, &z| *d *= layer.activation.derivative(z));
        if want_params {
            let below: &Array2<f64> = if l == 0 { x } else { &trace.post[l - 1] };
            weights.push(delta.t().dot(below));
            biases.push(delta.sum_axis(Axis(0)));
        }
        if l > 0 {
            delta = delta.dot(&layer.weights);
        } else if want_input {
            input_grad = Some(delta.dot(&layer.weights));
        }
    }

    let grads = want_params.then(|| {
        weights.reverse();
        biases.reverse();
        Gradients { weights, biases }
    });
    (grads, input_grad)
}

/// Mean cross-entropy loss and its parameter gradients for one batch.
pub fn loss_and_param_grads(
    net: &Network,
    x: &Array2<f64>,
    labels: &[u8],
) -> Result<(f64, Gradients)> {
    let (loss, grads, _) = train_step_stats(net, x, labels)?;
    Ok((loss, grads))
}

/// Loss, parameter gradients, and correct-prediction count in one pass.
/// Shares the forward trace so training does not run the batch twice.
pub(crate) fn train_step_stats(
    net: &Network,
    x: &Array2<f64>,
    labels: &[u8],
) -> Result<(f64, Gradients, usize)> {
    check_labels(labels, x.nrows(), net.num_classes())?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let trace = net.forward(x)?;
    let logits = trace.logits();
    let loss = cross_entropy_loss(logits, labels)?;
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, label)| crate::network::argmax(row.as_slice().unwrap()) == **label)
        .count();
    let mut delta = softmax_minus_onehot(logits, labels);
    delta /= x.nrows() as f64;
    let (grads, _) = backward(net, x, &trace, delta, true, false);
    Ok((loss, grads.unwrap(), correct))
}

/// Gradient of the objective with respect to the input pixels.
///
/// The objective is summed over the batch, so row `i` of the result is exactly
/// the gradient for sample `i`.
pub fn input_gradient(net: &Network, x: &Array2<f64>, objective: Objective) -> Result<Array2<f64>> {
    let trace = net.forward(x)?;
    let delta = match objective {
        Objective::CrossEntropy(labels) => {
            check_labels(labels, x.nrows(), net.num_classes())?;
            softmax_minus_onehot(trace.logits(), labels)
        }
        Objective::Logit(class) => {
            if class >= net.num_classes() {
                return Err(Error::InvalidClass {
                    class,
                    num_classes: net.num_classes(),
                });
            }
            let mut delta = Array2::zeros((x.nrows(), net.num_classes()));
            delta.column_mut(class).fill(1.0);
            delta
        }
    };
    let (_, input_grad) = backward(net, x, &trace, delta, false, true);
    Ok(input_grad.expect("input gradient requested"))
}

/// Input gradient of `sum_ij delta[i][j] * Z_j(x_i)` for an arbitrary logit
/// coefficient matrix, used by attacks that mix per-sample class objectives.
pub(crate) fn input_gradient_with_delta(
    net: &Network,
    x: &Array2<f64>,
    delta: Array2<f64>,
) -> Result<Array2<f64>> {
    if delta.dim() != (x.nrows(), net.num_classes()) {
        return Err(Error::ShapeMismatch {
            context: "logit delta",
            expected: format!("{} x {}", x.nrows(), net.num_classes()),
            found: format!("{} x {}", delta.nrows(), delta.ncols()),
        });
    }
    let trace = net.forward(x)?;
    let (_, input_grad) = backward(net, x, &trace, delta, false, true);
    Ok(input_grad.expect("input gradient requested"))
}
