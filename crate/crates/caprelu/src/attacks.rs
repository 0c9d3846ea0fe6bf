//! White-box attacks: FGSM, PGD with exact L∞/box projection, CW-L2 in
//! tanh space, and the zero-gradient probe.
//!
//! All attacks run whole batches in lockstep and are deterministic given
//! (network, inputs, config, seed).

use ndarray::{Array2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::{input_gradient, input_gradient_with_delta, Objective};
use crate::error::{Error, Result};
use crate::network::{argmax, Network};

/// Configuration for L∞-bounded iterative attacks (and the probe, which may
/// set `epsilon` to infinity for the unconstrained mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinfAttackConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub max_iter: usize,
    pub random_start: bool,
    /// Seed for the random start; unused when `random_start` is off.
    pub seed: u64,
}

impl LinfAttackConfig {
    pub fn new(epsilon: f64, step_size: f64, max_iter: usize) -> Self {
        LinfAttackConfig {
            epsilon,
            step_size,
            max_iter,
            random_start: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidAttackConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidAttackConfig(format!(
                "step_size must be finite and >= 0, got {}",
                self.step_size
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidAttackConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// CW-L2 settings. Defaults are the conventional full-strength run:
/// 10000 iterations, lr 0.01, initial balancing factor 0.001, 9 searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwConfig {
    pub max_iter: usize,
    pub lr: f64,
    pub initial_c: f64,
    pub binary_search_steps: usize,
    /// Confidence margin kappa; 0 disables it.
    pub confidence: f64,
}

impl Default for CwConfig {
    fn default() -> Self {
        CwConfig {
            max_iter: 10000,
            lr: 0.01,
            initial_c: 0.001,
            binary_search_steps: 9,
            confidence: 0.0,
        }
    }
}

impl CwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.binary_search_steps == 0 {
            return Err(Error::InvalidAttackConfig(
                "max_iter and binary_search_steps must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.initial_c > 0.0) || !(self.confidence >= 0.0) {
            return Err(Error::InvalidAttackConfig(
                "lr and initial_c must be > 0, confidence >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample outcome of [`cw_l2`].
#[derive(Debug, Clone)]
pub struct CwOutcome {
    /// Best adversarial example per row; the clean row where the attack failed.
    pub adversarial: Array2<f64>,
    pub success: Vec<bool>,
    /// L2 distance of the returned example, present only on success.
    pub l2: Vec<Option<f64>>,
}

/// Outcome of the zero-gradient probe for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroGradProbeResult {
    pub found: bool,
    /// Euclidean distance from the clean sample, present only when found.
    pub distance: Option<f64>,
    pub iterations_used: usize,
}

/// Sign with `sign(0) = 0`, so zero-gradient coordinates do not move.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn ascend_and_project(adv: &mut Array2<f64>, grad: &Array2<f64>, x0: &Array2<f64>, step: f64, epsilon: f64) {
    Zip::from(adv).and(grad).and(x0).for_each(|a, &g, &x| {
        *a = (*a + step * sign(g)).clamp(x - epsilon, x + epsilon).clamp(0.0, 1.0);
    });
}

/// Fast Gradient Sign Method: `clip(x + epsilon * sign(grad CE))`.
pub fn fgsm(net: &Network, x: &Array2<f64>, labels: &[u8], epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidAttackConfig(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    let grad = input_gradient(net, x, Objective::CrossEntropy(labels))?;
    let mut adv = x.clone();
    ascend_and_project(&mut adv, &grad, x, epsilon, epsilon);
    Ok(adv)
}

/// Projected gradient descent on the cross-entropy loss, confined to the
/// ε-ball around `x` intersected with `[0, 1]`.
pub fn pgd(net: &Network, x: &Array2<f64>, labels: &[u8], cfg: &LinfAttackConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let mut adv = x.clone();
    if cfg.random_start && cfg.epsilon > 0.0 && cfg.epsilon.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dist = Uniform::new_inclusive(-cfg.epsilon, cfg.epsilon);
        adv.mapv_inplace(|v| v + dist.sample(&mut rng));
        Zip::from(&mut adv).and(x).for_each(|a, &x0| {
            *a = a.clamp(x0 - cfg.epsilon, x0 + cfg.epsilon).clamp(0.0, 1.0);
        });
    }
    for _ in 0..cfg.max_iter {
        let grad = input_gradient(net, &adv, Objective::CrossEntropy(labels))?;
        ascend_and_project(&mut adv, &grad, x, cfg.step_size, cfg.epsilon);
    }
    Ok(adv)
}

/// Elementwise Adam over a flat buffer, used by the CW inner loop.
struct FlatAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl FlatAdam {
    fn new(len: usize, lr: f64) -> Self {
        FlatAdam { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            p[i] -= self.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

/// Margin `Z_label - max_{i != label} Z_i` and the runner-up class per row.
fn margins(logits: &Array2<f64>, labels: &[u8]) -> Vec<(f64, usize)> {
    logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &label)| {
            let mut best = f64::NEG_INFINITY;
            let mut idx = 0;
            for (i, &v) in row.iter().enumerate() {
                if i != label as usize && v > best {
                    best = v;
                    idx = i;
                }
            }
            (row[label as usize] - best, idx)
        })
        .collect()
}

/// Untargeted Carlini-Wagner L2 attack in tanh space with per-sample binary
/// search over the balancing factor `c` (grown tenfold until the first
/// success, bisected afterwards). Rows where no adversarial example is found
/// come back unchanged with `success = false`.
pub fn cw_l2(net: &Network, x: &Array2<f64>, labels: &[u8], cfg: &CwConfig) -> Result<CwOutcome> {
    cfg.validate()?;
    let n = x.nrows();
    let dim = x.ncols();
    let num_classes = net.num_classes();

    // atanh needs arguments strictly inside (-1, 1)
    let clip = 1.0 - 1e-6;
    let w0: Array2<f64> = x.mapv(|v| ((2.0 * v - 1.0).clamp(-clip, clip)).atanh());

    let mut best_adv = x.clone();
    let mut best_l2 = vec![f64::INFINITY; n];
    let mut success = vec![false; n];

    let mut c = vec![cfg.initial_c; n];
    let mut lo = vec![0.0f64; n];
    let mut hi = vec![f64::INFINITY; n];

    for _search in 0..cfg.binary_search_steps {
        let mut w = w0.clone();
        let mut adam = FlatAdam::new(n * dim, cfg.lr);
        let mut succeeded_this_run = vec![false; n];

        for _ in 0..cfg.max_iter {
            let tanh_w = w.mapv(f64::tanh);
            let adv = tanh_w.mapv(|t| (t + 1.0) / 2.0);
            let logits = net.logits(&adv)?;

            // Track the best (lowest-L2) success seen at any iterate.
            for (i, (row, &label)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
                if argmax(row.as_slice().unwrap()) != label {
                    let mut d2 = 0.0;
                    for j in 0..dim {
                        let diff = adv[(i, j)] - x[(i, j)];
                        d2 += diff * diff;
                    }
                    let d = d2.sqrt();
                    succeeded_this_run[i] = true;
                    if d < best_l2[i] {
                        best_l2[i] = d;
                        success[i] = true;
                        best_adv.row_mut(i).assign(&adv.row(i));
                    }
                }
            }

            // Objective gradient w.r.t. the adversarial image:
            //   d/dx' [ ||x' - x||^2 + c * max(margin, -kappa) ]
            let margin_info = margins(&logits, labels);
            let mut delta = Array2::zeros((n, num_classes));
            for (i, &(margin, runner_up)) in margin_info.iter().enumerate() {
                if margin > -cfg.confidence {
                    delta[(i, labels[i] as usize)] = c[i];
                    delta[(i, runner_up)] = -c[i];
                }
            }
            let f_grad = input_gradient_with_delta(net, &adv, delta)?;
            let mut grad = (&adv - x) * 2.0 + f_grad;
            // Chain through x' = (tanh(w) + 1) / 2.
            Zip::from(&mut grad).and(&tanh_w).for_each(|g, &t| *g *= (1.0 - t * t) / 2.0);

            adam.step(w.as_slice_mut().unwrap(), grad.as_slice().unwrap());
        }

        for i in 0..n {
            if succeeded_this_run[i] {
                hi[i] = c[i];
                c[i] = (lo[i] + hi[i]) / 2.0;
            } else {
                lo[i] = c[i];
                c[i] = if hi[i].is_finite() { (lo[i] + hi[i]) / 2.0 } else { c[i] * 10.0 };
            }
        }
    }

    let l2 = success
        .iter()
        .zip(&best_l2)
        .map(|(&s, &d)| if s { Some(d) } else { None })
        .collect();
    Ok(CwOutcome { adversarial: best_adv, success, l2 })
}

/// PGD-style ascent that ignores misclassification and stops only when the
/// cross-entropy input gradient vanishes (L∞ norm at or below
/// `grad_tolerance`) or the iteration budget runs out.
///
/// `cfg.epsilon` may be infinite for the unconstrained-within-`[0,1]` mode.
/// The reported distance is Euclidean, measured from the clean sample at the
/// first zero-gradient iterate; the gradient is checked before the first step,
/// so an already-flat sample reports distance 0 at iteration 0.
pub fn zero_gradient_probe(
    net: &Network,
    x: &Array2<f64>,
    labels: &[u8],
    cfg: &LinfAttackConfig,
    grad_tolerance: f64,
) -> Result<Vec<ZeroGradProbeResult>> {
    cfg.validate()?;
    if !(grad_tolerance >= 0.0) {
        return Err(Error::InvalidAttackConfig(format!(
            "grad_tolerance must be >= 0, got {grad_tolerance}"
        )));
    }
    let n = x.nrows();
    let mut adv = x.clone();
    let mut results: Vec<Option<ZeroGradProbeResult>> = vec![None; n];

    for iter in 0..=cfg.max_iter {
        let grad = input_gradient(net, &adv, Objective::CrossEntropy(labels))?;
        let mut all_done = true;
        for i in 0..n {
            if results[i].is_some() {
                continue;
            }
            let gmax = grad.row(i).iter().fold(0.0f64, |m, &g| m.max(g.abs()));
            if gmax <= grad_tolerance {
                let mut d2 = 0.0;
                for j in 0..x.ncols() {
                    let diff = adv[(i, j)] - x[(i, j)];
                    d2 += diff * diff;
                }
                results[i] = Some(ZeroGradProbeResult {
                    found: true,
                    distance: Some(d2.sqrt()),
                    iterations_used: iter,
                });
            } else {
                all_done = false;
            }
        }
        if all_done || iter == cfg.max_iter {
            break;
        }
        for i in 0..n {
            if results[i].is_some() {
                continue;
            }
            for j in 0..x.ncols() {
                let stepped = adv[(i, j)] + cfg.step_size * sign(grad[(i, j)]);
                adv[(i, j)] = stepped
                    .clamp(x[(i, j)] - cfg.epsilon, x[(i, j)] + cfg.epsilon)
                    .clamp(0.0, 1.0);
            }
        }
    }

    Ok(results
        .into_iter()
        .map(|r| {
            r.unwrap_or(ZeroGradProbeResult {
                found: false,
                distance: None,
                iterations_used: cfg.max_iter,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::network::build_network;
    use ndarray::array;

    fn toy_net() -> Network {
        build_network(
            &[4, 6, 3],
            &[ActivationKind::Relu, ActivationKind::Identity],
            11,
        )
        .unwrap()
    }

    #[test]
    fn fgsm_with_zero_epsilon_returns_x() {
        let net = toy_net();
        let x = array![[0.1, 0.9, 0.4, 0.0]];
        let adv = fgsm(&net, &x, &[1], 0.0).unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn fgsm_linear_net_matches_hand_sign_pattern() {
        // Identity net, 2 classes: CE gradient for label 0 is
        // (p0 - 1) w0 + p1 w1 = p1 (w1 - w0). With w1 - w0 = [1, -2, 0, 3]
        // the perturbation must be eps * [1, -1, 0, 1].
        let mut net = build_network(&[4, 2], &[ActivationKind::Identity], 0).unwrap();
        net.layers[0].weights = array![[0.0, 1.0, 0.0, -1.0], [1.0, -1.0, 0.0, 2.0]];
        let x = array![[0.5, 0.5, 0.5, 0.5]];
        let eps = 0.1;
        let adv = fgsm(&net, &x, &[0], eps).unwrap();
        let expected = array![[0.6, 0.4, 0.5, 0.6]];
        assert!(adv
            .iter()
            .zip(expected.iter())
            .all(|(a, e)| (a - e).abs() < 1e-12));
    }

    #[test]
    fn pgd_single_step_alpha_eq_eps_is_fgsm_bitwise() {
        let net = toy_net();
        let x = array![[0.2, 0.8, 0.5, 0.3], [0.9, 0.1, 0.0, 1.0]];
        let labels = [2, 0];
        let eps = 0.07;
        let via_fgsm = fgsm(&net, &x, &labels, eps).unwrap();
        let via_pgd = pgd(&net, &x, &labels, &LinfAttackConfig::new(eps, eps, 1)).unwrap();
        assert_eq!(via_fgsm, via_pgd);
    }

    #[test]
    fn pgd_zero_epsilon_is_identity() {
        let net = toy_net();
        let x = array![[0.2, 0.8, 0.5, 0.3]];
        let adv = pgd(&net, &x, &[1], &LinfAttackConfig::new(0.0, 0.0, 5)).unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn pgd_respects_ball_and_box_exactly() {
        let net = toy_net();
        let x = array![[0.0, 1.0, 0.05, 0.97]];
        let cfg = LinfAttackConfig::new(0.1, 0.03, 7);
        let adv = pgd(&net, &x, &[0], &cfg).unwrap();
        for (a, x0) in adv.iter().zip(x.iter()) {
            assert!((a - x0).abs() <= cfg.epsilon + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn pgd_random_start_is_seeded() {
        let net = toy_net();
        let x = array![[0.2, 0.8, 0.5, 0.3]];
        let mut cfg = LinfAttackConfig::new(0.1, 0.02, 3);
        cfg.random_start = true;
        cfg.seed = 5;
        let a = pgd(&net, &x, &[1], &cfg).unwrap();
        let b = pgd(&net, &x, &[1], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cw_fails_on_input_blind_net() {
        // Zero weights: logits are constant, prediction is always class 0,
        // so a label-0 sample can never be flipped.
        let mut net = build_network(&[4, 3], &[ActivationKind::Identity], 0).unwrap();
        net.layers[0].weights.fill(0.0);
        let x = array![[0.3, 0.6, 0.2, 0.8]];
        let cfg = CwConfig {
            max_iter: 50,
            binary_search_steps: 3,
            ..CwConfig::default()
        };
        let out = cw_l2(&net, &x, &[0], &cfg).unwrap();
        assert_eq!(out.success, vec![false]);
        assert_eq!(out.l2, vec![None]);
        assert_eq!(out.adversarial, x);
    }

    #[test]
    fn cw_flips_an_easy_linear_margin() {
        // Z = [x0 + 0.5, 2 x0]: class 0 holds while x0 < 0.5, so the nearest
        // flip moves pixel 0 from 0.3 to just past 0.5 (L2 about 0.2).
        let mut net = build_network(&[2, 2], &[ActivationKind::Identity], 0).unwrap();
        net.layers[0].weights = array![[1.0, 0.0], [2.0, 0.0]];
        net.layers[0].bias = ndarray::array![0.5, 0.0];
        let x = array![[0.3, 0.5]];
        let cfg = CwConfig {
            max_iter: 300,
            binary_search_steps: 6,
            initial_c: 1.0,
            ..CwConfig::default()
        };
        let out = cw_l2(&net, &x, &[0], &cfg).unwrap();
        assert_eq!(out.success, vec![true]);
        let adv = &out.adversarial;
        assert_eq!(net.predict(adv).unwrap(), vec![1]);
        let reported = out.l2[0].unwrap();
        let actual = ((adv[(0, 0)] - 0.3).powi(2) + (adv[(0, 1)] - 0.5).powi(2)).sqrt();
        assert!((reported - actual).abs() < 1e-9);
        assert!((0.15..=0.4).contains(&reported));
    }

    #[test]
    fn probe_finds_zero_gradient_immediately_when_saturated() {
        // Capped layer saturated at every unit: gradient is identically zero.
        let mut net = build_network(
            &[2, 2, 2],
            &[ActivationKind::CappedRelu { beta: 0.1 }, ActivationKind::Identity],
            0,
        )
        .unwrap();
        net.layers[0].weights = array![[5.0, 5.0], [5.0, 5.0]];
        net.layers[0].bias = ndarray::array![1.0, 1.0];
        let x = array![[0.9, 0.9]];
        let cfg = LinfAttackConfig::new(f64::INFINITY, 2.0 / 256.0, 50);
        let res = zero_gradient_probe(&net, &x, &[0], &cfg, 1e-12).unwrap();
        assert_eq!(
            res,
            vec![ZeroGradProbeResult {
                found: true,
                distance: Some(0.0),
                iterations_used: 0
            }]
        );
    }

    #[test]
    fn probe_never_finds_zero_gradient_on_a_linear_net() {
        let mut net = build_network(&[2, 2], &[ActivationKind::Identity], 0).unwrap();
        net.layers[0].weights = array![[1.0, 0.0], [0.0, 1.0]];
        let x = array![[0.5, 0.5]];
        let cfg = LinfAttackConfig::new(f64::INFINITY, 2.0 / 256.0, 20);
        let res = zero_gradient_probe(&net, &x, &[0], &cfg, 1e-12).unwrap();
        assert!(!res[0].found);
        assert_eq!(res[0].distance, None);
        assert_eq!(res[0].iterations_used, 20);
    }

    #[test]
    fn probe_distance_is_euclidean_from_clean_sample() {
        // Saturate after a known number of steps and check the L2 arithmetic.
        let mut net = build_network(
            &[2, 1, 2],
            &[ActivationKind::CappedRelu { beta: 1.0 }, ActivationKind::Identity],
            0,
        )
        .unwrap();
        net.layers[0].weights = array![[4.0, 4.0]];
        net.layers[0].bias = ndarray::array![0.0];
        net.layers[1].weights = array![[1.0], [-1.0]];
        let x = array![[0.1, 0.1]];
        let cfg = LinfAttackConfig::new(f64::INFINITY, 0.05, 100);
        let res = zero_gradient_probe(&net, &x, &[1], &cfg, 1e-12).unwrap();
        assert!(res[0].found);
        let d = res[0].distance.unwrap();
        let steps = res[0].iterations_used as f64;
        let expected = (2.0 * (steps * 0.05).powi(2)).sqrt();
        assert!((d - expected).abs() < 1e-12);
        assert!(res[0].iterations_used > 0);
    }
}
