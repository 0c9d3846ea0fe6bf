//! Training loops: clean minibatch training and adversarial training where
//! each batch is attacked against the current parameters.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamHyper, AdamState};
use crate::attacks::{fgsm, pgd, LinfAttackConfig};
use crate::backprop::train_step_stats;
use crate::data::{batches, ImageDataset};
use crate::error::{Error, Result};
use crate::network::Network;

/// Clean-training settings. Defaults: 20 epochs, batch 128, Adam lr 0.001.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr: 0.001,
            seed: 42,
        }
    }
}

/// Attack used to build training batches during adversarial training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvAttack {
    Fgsm { epsilon: f64 },
    Pgd(LinfAttackConfig),
}

/// Adversarial-training settings: the inner attack, and whether batches are
/// replaced by adversarial examples (default) or doubled with clean + attacked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvTrainConfig {
    pub attack: AdvAttack,
    pub mixed: bool,
}

/// Per-epoch loss and accuracy on the (possibly adversarial) training batches.
#[derive(Debug, Clone, Default)]
pub struct TrainingHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

fn run_training(
    net: &mut Network,
    data: &ImageDataset,
    cfg: &TrainConfig,
    adv: Option<&AdvTrainConfig>,
) -> Result<TrainingHistory> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != net.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "train",
            expected: format!("{}-pixel images", net.input_dim()),
            found: format!("{}", data.dim()),
        });
    }

    let mut adam = AdamState::new(net, AdamHyper::with_lr(cfg.lr));
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainingHistory::default();

    for _ in 0..cfg.epochs {
        let epoch_seed = shuffler.next_u64();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut count = 0usize;
        for (x, labels) in batches(data, cfg.batch_size, epoch_seed) {
            let (x, labels) = match adv {
                None => (x, labels),
                Some(spec) => {
                    let attacked = match spec.attack {
                        AdvAttack::Fgsm { epsilon } => fgsm(net, &x, &labels, epsilon)?,
                        AdvAttack::Pgd(cfg) => pgd(net, &x, &labels, &cfg)?,
                    };
                    if spec.mixed {
                        let both = ndarray::concatenate(
                            ndarray::Axis(0),
                            &[x.view(), attacked.view()],
                        )
                        .expect("same widths");
                        let mut doubled = labels.clone();
                        doubled.extend_from_slice(&labels);
                        (both, doubled)
                    } else {
                        (attacked, labels)
                    }
                }
            };
            let (loss, grads, batch_correct) = train_step_stats(net, &x, &labels)?;
            adam.step(net, &grads)?;
            loss_sum += loss * x.nrows() as f64;
            correct += batch_correct;
            count += x.nrows();
        }
        history.epoch_loss.push(loss_sum / count as f64);
        history.epoch_accuracy.push(correct as f64 / count as f64);
    }
    Ok(history)
}

/// Trains on shuffled clean minibatches with a fresh Adam state.
/// Deterministic given (net, data, config).
pub fn train(net: &mut Network, data: &ImageDataset, cfg: &TrainConfig) -> Result<TrainingHistory> {
    run_training(net, data, cfg, None)
}

/// Adversarial training: every minibatch is attacked against the current
/// parameters before the update (or concatenated with the clean batch when
/// `adv.mixed` is set). Optimizer state is fresh for this phase.
pub fn adversarial_train(
    net: &mut Network,
    data: &ImageDataset,
    cfg: &TrainConfig,
    adv: &AdvTrainConfig,
) -> Result<TrainingHistory> {
    run_training(net, data, cfg, Some(adv))
}
