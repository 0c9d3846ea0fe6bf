//! Property-based invariants: clamp laws, attack bounds, metric definitions,
//! serialization round-trips.

mod common;

use caprelu::{
    attack_batch, batches, build_network, cw_l2, evaluate, evaluate_under_attack, fgsm,
    layer_distance_profile, load_checkpoint, pgd, save_checkpoint, sensitivity_scores, softmax,
    ActivationKind, AttackSpec, CwConfig, DistanceNorm, ImageDataset, LinfAttackConfig, Split,
};
use common::{assert_rel_close, central_fd, kink_free_input, min_kink_distance, random_labels, random_small_net};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn activation_strategy() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Relu),
        (0.01f64..2.0).prop_map(|beta| ActivationKind::CappedRelu { beta }),
        (1.0f64..4.0).prop_map(|scale| ActivationKind::Sigmoid { scale }),
        (1.0f64..4.0).prop_map(|scale| ActivationKind::Tanh { scale }),
        Just(ActivationKind::Identity),
    ]
}

fn input_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(0.0..=1.0))
}

proptest! {
    #[test]
    fn activations_are_monotone_nondecreasing(
        kind in activation_strategy(),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(kind.apply(lo) <= kind.apply(hi));
    }

    #[test]
    fn capped_layers_obey_the_clamp_law(seed in 0u64..500, beta in 0.01f64..1.5) {
        let mut net = random_small_net(seed);
        let hidden = net.layers.len() - 1;
        if hidden == 0 {
            return Ok(());
        }
        // Cap every ReLU-family hidden layer at beta.
        let targets: Vec<usize> = (0..hidden)
            .filter(|&l| matches!(
                net.layers[l].activation,
                ActivationKind::Relu | ActivationKind::CappedRelu { .. }
            ))
            .collect();
        if targets.is_empty() {
            return Ok(());
        }
        net.set_cap(&targets, beta).unwrap();
        let x = input_batch(4, net.input_dim(), seed ^ 0xbeef);
        let trace = net.forward(&x).unwrap();
        for &l in &targets {
            for &v in &trace.post[l] {
                prop_assert!((0.0..=beta).contains(&v));
            }
        }
    }

    #[test]
    fn capped_layer_linf_lipschitz_bound(seed in 0u64..500, beta in 0.01f64..1.0) {
        let mut net = random_small_net(seed);
        let hidden = net.layers.len() - 1;
        let targets: Vec<usize> = (0..hidden)
            .filter(|&l| matches!(
                net.layers[l].activation,
                ActivationKind::Relu | ActivationKind::CappedRelu { .. }
            ))
            .collect();
        if targets.is_empty() {
            return Ok(());
        }
        net.set_cap(&targets, beta).unwrap();
        let a = input_batch(3, net.input_dim(), seed ^ 1);
        let b = input_batch(3, net.input_dim(), seed ^ 2);
        let profile = layer_distance_profile(&net, &a, &b, DistanceNorm::Linf).unwrap();
        for &l in &targets {
            prop_assert!(profile.distances[l] <= beta + 1e-15);
        }
    }

    #[test]
    fn softmax_rows_normalize(seed in 0u64..1000, rows in 1usize..5, cols in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-50.0..50.0));
        let p = softmax(&logits);
        for row in p.axis_iter(Axis(0)) {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attack_outputs_respect_ball_and_box(
        seed in 0u64..300,
        epsilon in 0.0f64..0.5,
        iters in 1usize..5,
    ) {
        let net = random_small_net(seed);
        let x = input_batch(3, net.input_dim(), seed ^ 77);
        let labels = random_labels(&net, 3, seed ^ 99);

        let adv_f = fgsm(&net, &x, &labels, epsilon).unwrap();
        let cfg = LinfAttackConfig::new(epsilon, (epsilon / 2.0).max(1e-3), iters);
        let adv_p = pgd(&net, &x, &labels, &cfg).unwrap();
        for adv in [&adv_f, &adv_p] {
            for ((a, x0), _) in adv.iter().zip(x.iter()).zip(0..) {
                prop_assert!((a - x0).abs() <= epsilon + 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }

    #[test]
    fn pgd_one_full_step_is_fgsm_bitwise(seed in 0u64..300, epsilon in 1e-4f64..0.5) {
        let net = random_small_net(seed);
        let x = input_batch(2, net.input_dim(), seed ^ 1234);
        let labels = random_labels(&net, 2, seed ^ 4321);
        let via_fgsm = fgsm(&net, &x, &labels, epsilon).unwrap();
        let via_pgd = pgd(&net, &x, &labels, &LinfAttackConfig::new(epsilon, epsilon, 1)).unwrap();
        prop_assert_eq!(via_fgsm, via_pgd);
    }

    #[test]
    fn cw_successes_are_valid(seed in 0u64..60) {
        let net = random_small_net(seed);
        let x = input_batch(3, net.input_dim(), seed ^ 31);
        let labels = random_labels(&net, 3, seed ^ 13);
        let cfg = CwConfig {
            max_iter: 60,
            binary_search_steps: 3,
            initial_c: 0.1,
            ..CwConfig::default()
        };
        let out = cw_l2(&net, &x, &labels, &cfg).unwrap();
        let preds = net.predict(&out.adversarial).unwrap();
        for i in 0..3 {
            if out.success[i] {
                prop_assert_ne!(preds[i], labels[i]);
                let actual = out
                    .adversarial
                    .row(i)
                    .iter()
                    .zip(x.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let reported = out.l2[i].unwrap();
                prop_assert!((reported - actual).abs() < 1e-9);
            } else {
                prop_assert_eq!(out.l2[i], None);
                for (a, b) in out.adversarial.row(i).iter().zip(x.row(i)) {
                    prop_assert_eq!(*a, *b);
                }
            }
        }
    }

    #[test]
    fn metrics_match_a_direct_recount(seed in 0u64..200, epsilon in 0.0f64..0.3) {
        let net = random_small_net(seed);
        let n = 24;
        let ds = ImageDataset {
            images: input_batch(n, net.input_dim(), seed ^ 555),
            labels: random_labels(&net, n, seed ^ 666),
            split: Split::Test,
        };
        let spec = AttackSpec::Fgsm { epsilon };
        let m = evaluate_under_attack(&net, &ds, &spec).unwrap();

        let clean_preds = net.predict(&ds.images).unwrap();
        let adv = attack_batch(&net, &ds.images, &ds.labels, &spec).unwrap();
        let adv_preds = net.predict(&adv).unwrap();
        let correct = clean_preds.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
        let robust = adv_preds.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
        let flipped = (0..n)
            .filter(|&i| clean_preds[i] == ds.labels[i] && adv_preds[i] != ds.labels[i])
            .count();

        prop_assert!((m.standard_accuracy - correct as f64 / n as f64).abs() < 1e-15);
        prop_assert!((m.robust_accuracy - robust as f64 / n as f64).abs() < 1e-15);
        let expect_rate = if correct == 0 { 0.0 } else { flipped as f64 / correct as f64 };
        prop_assert!((m.success_rate - expect_rate).abs() < 1e-15);
        prop_assert_eq!(m.n_evaluated, n);
        prop_assert!((m.standard_accuracy - evaluate(&net, &ds).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn batches_partition_the_dataset(seed in 0u64..500, n in 1usize..40, batch in 1usize..10) {
        let ds = ImageDataset {
            images: input_batch(n, 3, seed),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            split: Split::Train,
        };
        let emitted: Vec<(Array2<f64>, Vec<u8>)> = batches(&ds, batch, seed).collect();
        let sizes: Vec<usize> = emitted.iter().map(|(x, _)| x.nrows()).collect();
        for (i, &s) in sizes.iter().enumerate() {
            if i + 1 < sizes.len() {
                prop_assert_eq!(s, batch);
            } else {
                prop_assert!(s >= 1 && s <= batch);
            }
        }
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);

        let mut seen: Vec<(u64, u8)> = emitted
            .iter()
            .flat_map(|(x, y)| {
                x.axis_iter(Axis(0))
                    .zip(y)
                    .map(|(row, &l)| ((row.sum() * 1e9).round() as u64, l))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut expected: Vec<(u64, u8)> = (0..n)
            .map(|i| (((ds.images.row(i).sum()) * 1e9).round() as u64, ds.labels[i]))
            .collect();
        seen.sort_unstable();
        expected.sort_unstable();
        prop_assert_eq!(seen, expected);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(seed in 0u64..300) {
        let net = random_small_net(seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.crlu");
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        prop_assert_eq!(net, loaded);
    }

    #[test]
    fn huge_cap_behaves_like_uncapped(seed in 0u64..200) {
        let mut relu_only = random_small_net(seed);
        for l in 0..relu_only.layers.len() - 1 {
            relu_only.layers[l].activation = ActivationKind::Relu;
        }
        let mut capped = relu_only.clone();
        let hidden: Vec<usize> = (0..capped.layers.len() - 1).collect();
        if hidden.is_empty() {
            return Ok(());
        }
        capped.set_cap(&hidden, 1e9).unwrap();
        let x = input_batch(3, relu_only.input_dim(), seed ^ 42);
        prop_assert_eq!(relu_only.logits(&x).unwrap(), capped.logits(&x).unwrap());
    }
}

#[test]
fn sensitivity_scores_match_brute_force_finite_differences() {
    // 4-pixel, 3-class toys: compose the product-map scores from per-class
    // logit finite differences and compare against the analytic path.
    for seed in 0..10u64 {
        let net = build_network(
            &[4, 6, 3],
            &[
                ActivationKind::CappedRelu { beta: 0.6 },
                ActivationKind::Identity,
            ],
            seed,
        )
        .unwrap();
        let x = kink_free_input(&net, 1, 1e-3, seed ^ 0xabc);
        assert!(min_kink_distance(&net, &x) > 1e-3);

        let t = (seed % 3) as usize;
        let analytic = sensitivity_scores(&net, &x, t).unwrap();

        let grad_of_class = |c: usize| -> Vec<f64> {
            (0..4)
                .map(|j| {
                    central_fd(
                        |v| {
                            let mut probe = x.clone();
                            probe[(0, j)] = v;
                            net.logits(&probe).unwrap()[(0, c)]
                        },
                        x[(0, j)],
                        1e-5,
                    )
                })
                .collect()
        };
        let g_t = grad_of_class(t);
        let mut g_rest = vec![0.0; 4];
        for c in 0..3 {
            if c != t {
                for (acc, g) in g_rest.iter_mut().zip(grad_of_class(c)) {
                    *acc += g;
                }
            }
        }
        for j in 0..4 {
            let numeric = (g_t[j] * g_rest[j]).max(0.0);
            assert_rel_close(
                analytic[j],
                numeric,
                1e-4,
                1e-9,
                &format!("smap seed {seed} pixel {j}"),
            );
        }
    }
}
