//! Robustness diagnostics: per-layer perturbation profiles, sensitivity maps,
//! and accuracy/success-rate metrics under attack.

use ndarray::{Array1, Array2, Axis};

use crate::attacks::{cw_l2, fgsm, pgd, CwConfig, LinfAttackConfig, ZeroGradProbeResult};
use crate::backprop::{input_gradient, Objective};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::network::Network;

/// Norm used for layer-distance profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceNorm {
    Linf,
    L2,
}

impl DistanceNorm {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceNorm::Linf => "linf",
            DistanceNorm::L2 => "l2",
        }
    }
}

/// Mean per-layer distance between clean and adversarial activations.
/// One entry per layer, the last being the logits.
#[derive(Debug, Clone)]
pub struct LayerDistanceProfile {
    pub distances: Vec<f64>,
    pub norm: DistanceNorm,
}

/// How far a perturbation has traveled by each layer: for every layer the
/// mean over samples of `||a_l(x_adv) - a_l(x_clean)||` in the chosen norm.
pub fn layer_distance_profile(
    net: &Network,
    clean: &Array2<f64>,
    adv: &Array2<f64>,
    norm: DistanceNorm,
) -> Result<LayerDistanceProfile> {
    if clean.dim() != adv.dim() {
        return Err(Error::ShapeMismatch {
            context: "layer distance profile",
            expected: format!("{:?}", clean.dim()),
            found: format!("{:?}", adv.dim()),
        });
    }
    let trace_clean = net.forward(clean)?;
    let trace_adv = net.forward(adv)?;
    let n = clean.nrows() as f64;
    let distances = trace_clean
        .post
        .iter()
        .zip(&trace_adv.post)
        .map(|(a, b)| {
            let per_sample = a
                .axis_iter(Axis(0))
                .zip(b.axis_iter(Axis(0)))
                .map(|(ra, rb)| match norm {
                    DistanceNorm::Linf => ra
                        .iter()
                        .zip(rb)
                        .fold(0.0f64, |m, (&va, &vb)| m.max((va - vb).abs())),
                    DistanceNorm::L2 => ra
                        .iter()
                        .zip(rb)
                        .map(|(&va, &vb)| (va - vb) * (va - vb))
                        .sum::<f64>()
                        .sqrt(),
                })
                .sum::<f64>();
            per_sample / n
        })
        .collect();
    Ok(LayerDistanceProfile { distances, norm })
}

/// Per-pixel sensitivity scores: `max(0, dZ_t/dx * sum_{c != t} dZ_c/dx)`,
/// computed on logits. Length equals the input dimension.
pub fn sensitivity_scores(net: &Network, x: &Array2<f64>, t: usize) -> Result<Array1<f64>> {
    if x.nrows() != 1 {
        return Err(Error::ShapeMismatch {
            context: "sensitivity scores",
            expected: "1 x input_dim".into(),
            found: format!("{} x {}", x.nrows(), x.ncols()),
        });
    }
    if t >= net.num_classes() {
        return Err(Error::InvalidClass {
            class: t,
            num_classes: net.num_classes(),
        });
    }
    let mut g_t = None;
    let mut g_rest = Array1::zeros(x.ncols());
    for c in 0..net.num_classes() {
        let g = input_gradient(net, x, Objective::Logit(c))?.row(0).to_owned();
        if c == t {
            g_t = Some(g);
        } else {
            g_rest += &g;
        }
    }
    let g_t = g_t.expect("t < num_classes");
    Ok(ndarray::Zip::from(&g_t).and(&g_rest).map_collect(|&a, &b| (a * b).max(0.0)))
}

/// The sensitivity map of one sample against its true class.
#[derive(Debug, Clone)]
pub struct SensitivityMap {
    /// 28 x 28 grid of non-negative scores.
    pub map: Array2<f64>,
    /// Sum of the grid.
    pub total: f64,
}

/// Sensitivity scores reshaped to the 28 x 28 image grid, plus their sum.
/// Requires a 784-pixel input.
pub fn sensitivity_map(net: &Network, x: &Array2<f64>, t: usize) -> Result<SensitivityMap> {
    let scores = sensitivity_scores(net, x, t)?;
    if scores.len() != 784 {
        return Err(Error::ShapeMismatch {
            context: "sensitivity map",
            expected: "784 pixels".into(),
            found: format!("{}", scores.len()),
        });
    }
    let total = scores.sum();
    let map = scores.into_shape_with_order((28, 28)).expect("784 = 28 * 28");
    Ok(SensitivityMap { map, total })
}

/// Accuracy and attack statistics over one dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessMetrics {
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    /// Fraction of initially-correct samples the attack flipped.
    pub success_rate: f64,
    pub n_evaluated: usize,
}

/// Attack selection for [`evaluate_under_attack`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSpec {
    Fgsm { epsilon: f64 },
    Pgd(LinfAttackConfig),
    CwL2(CwConfig),
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Fgsm { .. } => "fgsm",
            AttackSpec::Pgd(_) => "pgd",
            AttackSpec::CwL2(_) => "cw",
        }
    }
}

/// Fraction of clean samples the network classifies correctly.
pub fn evaluate(net: &Network, dataset: &ImageDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, labels) in eval_chunks(dataset) {
        let preds = net.predict(&x)?;
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Generates adversarial examples for one batch under the given attack.
/// CW failures return the clean rows, which keeps them counted as robust.
pub fn attack_batch(
    net: &Network,
    x: &Array2<f64>,
    labels: &[u8],
    spec: &AttackSpec,
) -> Result<Array2<f64>> {
    match spec {
        AttackSpec::Fgsm { epsilon } => fgsm(net, x, labels, *epsilon),
        AttackSpec::Pgd(cfg) => pgd(net, x, labels, cfg),
        AttackSpec::CwL2(cfg) => Ok(cw_l2(net, x, labels, cfg)?.adversarial),
    }
}

const EVAL_CHUNK: usize = 1000;

fn eval_chunks(dataset: &ImageDataset) -> impl Iterator<Item = (Array2<f64>, Vec<u8>)> + '_ {
    (0..dataset.len()).step_by(EVAL_CHUNK).map(|start| {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = dataset.images.select(Axis(0), &idx);
        let labels = dataset.labels[start..end].to_vec();
        (x, labels)
    })
}

/// Runs the attack over the whole dataset (in chunks, in order) and reports
/// standard accuracy, robust accuracy, and the attack success rate.
pub fn evaluate_under_attack(
    net: &Network,
    dataset: &ImageDataset,
    spec: &AttackSpec,
) -> Result<RobustnessMetrics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut clean_correct = 0usize;
    let mut adv_correct = 0usize;
    let mut flipped = 0usize;
    for (x, labels) in eval_chunks(dataset) {
        let clean_preds = net.predict(&x)?;
        let adv = attack_batch(net, &x, &labels, spec)?;
        let adv_preds = net.predict(&adv)?;
        for i in 0..labels.len() {
            let was_correct = clean_preds[i] == labels[i];
            let is_correct = adv_preds[i] == labels[i];
            clean_correct += was_correct as usize;
            adv_correct += is_correct as usize;
            flipped += (was_correct && !is_correct) as usize;
        }
    }
    let n = dataset.len();
    Ok(RobustnessMetrics {
        standard_accuracy: clean_correct as f64 / n as f64,
        robust_accuracy: adv_correct as f64 / n as f64,
        success_rate: if clean_correct == 0 {
            0.0
        } else {
            flipped as f64 / clean_correct as f64
        },
        n_evaluated: n,
    })
}

/// Mean distance over the found probes plus the found fraction.
/// The mean is absent when nothing was found.
pub fn aggregate_zero_grad(results: &[ZeroGradProbeResult]) -> (Option<f64>, f64) {
    let found: Vec<f64> = results.iter().filter_map(|r| r.distance).collect();
    let fraction = if results.is_empty() {
        0.0
    } else {
        found.len() as f64 / results.len() as f64
    };
    let mean = if found.is_empty() {
        None
    } else {
        Some(found.iter().sum::<f64>() / found.len() as f64)
    };
    (mean, fraction)
}
