//! Elementwise activation functions and their derivatives.
//!
//! The capped ReLU `a(z, beta) = max(0, min(z, beta))` is the centerpiece; plain
//! ReLU, scaled sigmoid/tanh, and identity round out the set. Derivatives at the
//! ReLU kinks (z = 0 and z = beta) are taken as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation applied elementwise by a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActivationKind {
    /// max(0, z)
    Relu,
    /// max(0, min(z, beta)), beta > 0
    CappedRelu { beta: f64 },
    /// 1 / (1 + exp(-scale * z)), scale >= 1
    Sigmoid { scale: f64 },
    /// tanh(scale * z), scale >= 1
    Tanh { scale: f64 },
    /// z
    Identity,
}

impl ActivationKind {
    /// Checks the parameter constraints (cap strictly positive, scales at least 1).
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::CappedRelu { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::InvalidActivation(format!("capped relu needs beta > 0, got {beta}")),
            ),
            ActivationKind::Sigmoid { scale } | ActivationKind::Tanh { scale }
                if !(scale >= 1.0 && scale.is_finite()) =>
            {
                Err(Error::InvalidActivation(format!(
                    "scaled activation needs scale >= 1, got {scale}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Applies the activation to one pre-activation value.
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            ActivationKind::Relu => z.max(0.0),
            ActivationKind::CappedRelu { beta } => z.min(beta).max(0.0),
            ActivationKind::Sigmoid { scale } => 1.0 / (1.0 + (-scale * z).exp()),
            ActivationKind::Tanh { scale } => (scale * z).tanh(),
            ActivationKind::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation, evaluated at `z`.
    ///
    /// At the ReLU kinks the subgradient 0 is used, so a saturated unit passes
    /// no gradient at all.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::CappedRelu { beta } => {
                if z > 0.0 && z < beta {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid { scale } => {
                let s = self.apply(z);
                scale * s * (1.0 - s)
            }
            ActivationKind::Tanh { scale } => {
                let t = (scale * z).tanh();
                scale * (1.0 - t * t)
            }
            ActivationKind::Identity => 1.0,
        }
    }

    /// The saturation cap, if this activation has one.
    pub fn cap(&self) -> Option<f64> {
        match *self {
            ActivationKind::CappedRelu { beta } => Some(beta),
            _ => None,
        }
    }
}
