//! Dense feed-forward networks over row-major `f64` matrices.
//!
//! A [`Network`] is a stack of [`DenseLayer`]s; inputs are batches with one
//! sample per row, and the final layer is always [`ActivationKind::Identity`]
//! so its outputs are raw logits.

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

/// One fully connected layer: `a = activation(x W^T + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Weight matrix, `out_dim x in_dim`.
    pub weights: Array2<f64>,
    /// Bias vector, `out_dim`.
    pub bias: Array1<f64>,
    pub activation: ActivationKind,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Feed-forward classifier with dense layers and logit outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
    input_dim: usize,
    num_classes: usize,
    /// Seed the parameters were initialized from, kept for checkpoint metadata.
    pub init_seed: Option<u64>,
}

/// Per-layer pre- and post-activation values recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activations `z_l`, one matrix per layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activations `a_l`; the last entry holds the logits.
    pub post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    /// Logits of the final (identity) layer.
    pub fn logits(&self) -> &Array2<f64> {
        self.post.last().expect("trace of a validated network is non-empty")
    }
}

/// Builds a network with He-style uniform init: weights drawn from
/// `U(-sqrt(6/in_dim), sqrt(6/in_dim))` in row-major order, biases zero.
///
/// `dims` lists layer widths input-first (e.g. `[784, 392, 196, 10]`) and
/// `activations` one activation per layer; the last must be `Identity`.
pub fn build_network(dims: &[usize], activations: &[ActivationKind], seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need input and output dims, got {} entries",
            dims.len()
        )));
    }
    if let Some(&d) = dims.iter().find(|&&d| d == 0) {
        return Err(Error::InvalidArchitecture(format!("zero-width layer (dim {d})")));
    }
    if activations.len() != dims.len() - 1 {
        return Err(Error::InvalidArchitecture(format!(
            "{} dims imply {} layers but {} activations given",
            dims.len(),
            dims.len() - 1,
            activations.len()
        )));
    }
    if *activations.last().unwrap() != ActivationKind::Identity {
        return Err(Error::InvalidArchitecture(
            "final layer must be Identity so outputs are logits".into(),
        ));
    }
    for a in activations {
        a.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(activations.len());
    for (l, &activation) in activations.iter().enumerate() {
        let (in_dim, out_dim) = (dims[l], dims[l + 1]);
        let bound = (6.0 / in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let values: Vec<f64> = (0..out_dim * in_dim).map(|_| dist.sample(&mut rng)).collect();
        let weights = Array2::from_shape_vec((out_dim, in_dim), values)
            .expect("length matches shape by construction");
        layers.push(DenseLayer {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        });
    }

    Ok(Network {
        input_dim: dims[0],
        num_classes: *dims.last().unwrap(),
        layers,
        init_seed: Some(seed),
    })
}

impl Network {
    /// Assembles a network from raw parts; callers must [`Network::validate`].
    pub(crate) fn from_parts(
        input_dim: usize,
        num_classes: usize,
        layers: Vec<DenseLayer>,
        init_seed: Option<u64>,
    ) -> Network {
        Network {
            layers,
            input_dim,
            num_classes,
            init_seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Layer widths input-first, mirroring the `dims` given to [`build_network`].
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(DenseLayer::out_dim));
        dims
    }

    pub fn activations(&self) -> Vec<ActivationKind> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Checks dimension chaining, activation parameters, and the identity
    /// output convention. Used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArchitecture("network has no layers".into()));
        }
        let mut expect = self.input_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() != expect {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {l} expects {} inputs but previous width is {expect}",
                    layer.in_dim()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {l} bias length {} != out dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            layer.activation.validate()?;
            expect = layer.out_dim();
        }
        if expect != self.num_classes {
            return Err(Error::InvalidArchitecture(format!(
                "final width {expect} != num_classes {}",
                self.num_classes
            )));
        }
        if self.layers.last().unwrap().activation != ActivationKind::Identity {
            return Err(Error::InvalidArchitecture(
                "final layer must be Identity so outputs are logits".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>, context: &'static str) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("batch x {}", self.input_dim),
                found: format!("{} x {}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer, recording pre- and post-activations.
    pub fn forward(&self, x: &Array2<f64>) -> Result<ForwardTrace> {
        self.check_input(x, "forward")?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a.clone());
        }
        Ok(ForwardTrace { pre, post })
    }

    /// Logits only, without retaining intermediate activations.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x, "logits")?;
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Predicted class per row: argmax over logits, ties broken toward the
    /// lowest class index.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<u8>> {
        let logits = self.logits(x)?;
        Ok(logits.axis_iter(Axis(0)).map(|row| argmax(row.as_slice().unwrap())).collect())
    }

    /// Replaces the activation at each listed layer with `CappedRelu { beta }`.
    ///
    /// Only ReLU-family hidden layers can take a cap; the output layer and
    /// sigmoid/tanh layers are rejected.
    pub fn set_cap(&mut self, layers: &[usize], beta: f64) -> Result<()> {
        ActivationKind::CappedRelu { beta }.validate()?;
        let last = self.layers.len() - 1;
        for &l in layers {
            if l >= self.layers.len() {
                return Err(Error::InvalidCapTarget {
                    layer: l,
                    reason: format!("network has {} layers", self.layers.len()),
                });
            }
            if l == last {
                return Err(Error::InvalidCapTarget {
                    layer: l,
                    reason: "output layer must stay Identity".into(),
                });
            }
            match self.layers[l].activation {
                ActivationKind::Relu | ActivationKind::CappedRelu { .. } => {}
                other => {
                    return Err(Error::InvalidCapTarget {
                        layer: l,
                        reason: format!("activation {other:?} is not in the ReLU family"),
                    })
                }
            }
        }
        for &l in layers {
            self.layers[l].activation = ActivationKind::CappedRelu { beta };
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u8
}
