//! Finite-difference oracles for the analytic gradients.
//!
//! Every check compares manual backprop against central differences
//! (h = 1e-5, 64-bit) at points sampled away from activation kinks, with
//! relative tolerance 1e-4.

mod common;

use caprelu::{
    build_network, cross_entropy_loss, input_gradient, loss_and_param_grads, ActivationKind,
    Network, Objective,
};
use common::{assert_rel_close, central_fd, kink_free_input, random_labels, random_small_net};
use ndarray::Array2;

const H: f64 = 1e-5;
const REL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;
const KINK_MARGIN: f64 = 1e-3;

fn loss_of(net: &Network, x: &Array2<f64>, labels: &[u8]) -> f64 {
    cross_entropy_loss(&net.logits(x).unwrap(), labels).unwrap()
}

fn check_param_grads(net: &Network, x: &Array2<f64>, labels: &[u8], tag: &str) {
    let (_, grads) = loss_and_param_grads(net, x, labels).unwrap();
    for l in 0..net.layers.len() {
        let (rows, cols) = net.layers[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let w0 = net.layers[l].weights[(r, c)];
                let numeric = central_fd(
                    |w| {
                        let mut probe = net.clone();
                        probe.layers[l].weights[(r, c)] = w;
                        loss_of(&probe, x, labels)
                    },
                    w0,
                    H,
                );
                assert_rel_close(
                    grads.weights[l][(r, c)],
                    numeric,
                    REL,
                    ABS_FLOOR,
                    &format!("{tag}: dL/dW[{l}][{r},{c}]"),
                );
            }
        }
        for r in 0..rows {
            let b0 = net.layers[l].bias[r];
            let numeric = central_fd(
                |b| {
                    let mut probe = net.clone();
                    probe.layers[l].bias[r] = b;
                    loss_of(&probe, x, labels)
                },
                b0,
                H,
            );
            assert_rel_close(
                grads.biases[l][r],
                numeric,
                REL,
                ABS_FLOOR,
                &format!("{tag}: dL/db[{l}][{r}]"),
            );
        }
    }
}

fn check_input_grads(net: &Network, x: &Array2<f64>, labels: &[u8], tag: &str) {
    // Cross-entropy objective (summed over batch; each row is its own sample).
    let g = input_gradient(net, x, Objective::CrossEntropy(labels)).unwrap();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let numeric = central_fd(
                |v| {
                    let mut probe = x.clone();
                    probe[(i, j)] = v;
                    // Sum over batch == batch mean * n.
                    loss_of(net, &probe, labels) * x.nrows() as f64
                },
                x[(i, j)],
                H,
            );
            assert_rel_close(
                g[(i, j)],
                numeric,
                REL,
                ABS_FLOOR,
                &format!("{tag}: dCE/dx[{i},{j}]"),
            );
        }
    }

    // Logit objective for one class.
    let class = net.num_classes() - 1;
    let g = input_gradient(net, x, Objective::Logit(class)).unwrap();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let numeric = central_fd(
                |v| {
                    let mut probe = x.clone();
                    probe[(i, j)] = v;
                    net.logits(&probe).unwrap().column(class).sum()
                },
                x[(i, j)],
                H,
            );
            assert_rel_close(
                g[(i, j)],
                numeric,
                REL,
                ABS_FLOOR,
                &format!("{tag}: dZ{class}/dx[{i},{j}]"),
            );
        }
    }
}

#[test]
fn spec_sized_net_matches_finite_differences() {
    let net = build_network(
        &[16, 8, 4],
        &[ActivationKind::Relu, ActivationKind::Identity],
        7,
    )
    .unwrap();
    let x = kink_free_input(&net, 3, KINK_MARGIN, 1);
    let labels = random_labels(&net, 3, 2);
    check_param_grads(&net, &x, &labels, "16-8-4");
    check_input_grads(&net, &x, &labels, "16-8-4");
}

#[test]
fn twenty_random_nets_match_finite_differences() {
    for seed in 0..20 {
        let net = random_small_net(seed);
        let x = kink_free_input(&net, 2, KINK_MARGIN, seed.wrapping_mul(31) + 5);
        let labels = random_labels(&net, 2, seed + 100);
        let tag = format!("net {seed}");
        check_param_grads(&net, &x, &labels, &tag);
        check_input_grads(&net, &x, &labels, &tag);
    }
}

#[test]
fn saturated_capped_units_kill_the_gradient() {
    // Inputs driving every first-layer unit above beta: loss must be flat in
    // every input coordinate, analytically and numerically.
    let mut net = build_network(
        &[4, 6, 3],
        &[ActivationKind::CappedRelu { beta: 0.05 }, ActivationKind::Identity],
        3,
    )
    .unwrap();
    for w in net.layers[0].weights.iter_mut() {
        *w = w.abs() + 0.5;
    }
    let x = Array2::from_elem((2, 4), 0.9);
    let labels = vec![0, 1];

    let g = input_gradient(&net, &x, Objective::CrossEntropy(&labels)).unwrap();
    assert!(g.iter().all(|&v| v == 0.0), "analytic gradient not exactly zero");

    let base = loss_of(&net, &x, &labels);
    for j in 0..4 {
        let mut probe = x.clone();
        probe[(0, j)] += 1e-3;
        assert_eq!(loss_of(&net, &probe, &labels), base);
    }
}
