//! Dense-network adversarial robustness toolkit built around the capped ReLU
//! activation `a(z, beta) = max(0, min(z, beta))`.
//!
//! The crate provides:
//! - dense feed-forward classifiers with exact manual backpropagation and
//!   Adam training ([`network`], [`backprop`], [`adam`], [`train`]);
//! - MNIST IDX loading with deterministic minibatching ([`data`]);
//! - white-box attacks: FGSM, PGD, CW-L2, and the zero-gradient probe
//!   ([`attacks`]);
//! - robustness diagnostics: layer-distance profiles, sensitivity maps, and
//!   accuracy metrics under attack ([`analysis`]);
//! - bitwise-exact binary checkpoints ([`checkpoint`]).
//!
//! Everything is 64-bit and deterministic given explicit seeds.

pub mod activation;
pub mod adam;
pub mod analysis;
pub mod attacks;
pub mod backprop;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod network;
pub mod train;

pub use activation::ActivationKind;
pub use adam::{AdamHyper, AdamState};
pub use analysis::{
    aggregate_zero_grad, attack_batch, evaluate, evaluate_under_attack, layer_distance_profile,
    sensitivity_map, sensitivity_scores, AttackSpec, DistanceNorm, LayerDistanceProfile,
    RobustnessMetrics, SensitivityMap,
};
pub use attacks::{
    cw_l2, fgsm, pgd, zero_gradient_probe, CwConfig, CwOutcome, LinfAttackConfig,
    ZeroGradProbeResult,
};
pub use backprop::{cross_entropy_loss, input_gradient, loss_and_param_grads, softmax, Gradients, Objective};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{
    batches, load_mnist, mnist_paths, write_idx_images, write_idx_labels, ImageDataset, Split,
};
pub use error::{Error, Result};
pub use network::{argmax, build_network, DenseLayer, ForwardTrace, Network};
pub use train::{adversarial_train, train, AdvAttack, AdvTrainConfig, TrainConfig, TrainingHistory};
