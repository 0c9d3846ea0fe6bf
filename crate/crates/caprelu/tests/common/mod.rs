//! Shared helpers for the integration tests: random-net generation and the
//! central finite-difference oracle.

// Each test target compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use caprelu::{build_network, ActivationKind, Network};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative closeness with an absolute floor for near-zero values.
pub fn assert_rel_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64, what: &str) {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        diff <= abs_floor + rel * scale,
        "{what}: analytic {analytic} vs numeric {numeric} (diff {diff}, scale {scale})"
    );
}

/// Central finite difference of `f` at `x0`.
pub fn central_fd(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

fn random_activation(rng: &mut ChaCha8Rng) -> ActivationKind {
    match rng.gen_range(0..5) {
        0 => ActivationKind::Relu,
        1 => ActivationKind::CappedRelu {
            beta: rng.gen_range(0.05..1.5),
        },
        2 => ActivationKind::Sigmoid {
            scale: rng.gen_range(1.0..3.0),
        },
        3 => ActivationKind::Tanh {
            scale: rng.gen_range(1.0..3.0),
        },
        _ => ActivationKind::Identity,
    }
}

/// A random small network (dims <= 32) drawing hidden activations from every
/// kind, with an Identity output layer.
pub fn random_small_net(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden_layers = rng.gen_range(1..=3);
    let mut dims = vec![rng.gen_range(2..=16)];
    for _ in 0..hidden_layers {
        dims.push(rng.gen_range(2..=32));
    }
    dims.push(rng.gen_range(2..=10));
    let mut activations: Vec<ActivationKind> =
        (0..hidden_layers).map(|_| random_activation(&mut rng)).collect();
    activations.push(ActivationKind::Identity);
    build_network(&dims, &activations, seed ^ 0x5eed).unwrap()
}

/// Smallest distance from any pre-activation to an activation kink. Infinite
/// when no layer has kinks.
pub fn min_kink_distance(net: &Network, x: &Array2<f64>) -> f64 {
    let trace = net.forward(x).unwrap();
    let mut min = f64::INFINITY;
    for (layer, pre) in net.layers.iter().zip(&trace.pre) {
        match layer.activation {
            ActivationKind::Relu => {
                for &z in pre {
                    min = min.min(z.abs());
                }
            }
            ActivationKind::CappedRelu { beta } => {
                for &z in pre {
                    min = min.min(z.abs()).min((z - beta).abs());
                }
            }
            _ => {}
        }
    }
    min
}

/// A batch of inputs in `[0, 1]` whose pre-activations stay at least `margin`
/// away from every kink (resampled until that holds).
pub fn kink_free_input(net: &Network, rows: usize, margin: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let x = Array2::from_shape_fn((rows, net.input_dim()), |_| rng.gen_range(0.0..1.0));
        if min_kink_distance(net, &x) > margin {
            return x;
        }
    }
    panic!("could not sample a kink-free input in 200 tries");
}

/// Random labels valid for the network's class count.
pub fn random_labels(net: &Network, rows: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| rng.gen_range(0..net.num_classes()) as u8).collect()
}
