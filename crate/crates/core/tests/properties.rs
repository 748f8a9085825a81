use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;

use scyc::config::{canonical_config, parse_config_str};
use scyc::harness::ExperimentConfig;
use scyc::nn::{Gradients, Network};
use scyc::optim::{Optimizer, OptimizerKind};
use scyc::prune::{lambda_of, masks_nested, prune_step, PruneCriterion, ScoringRule};
use scyc::report::config_hash;
use scyc::sched::{DropMarks, SCycParams, ScheduleSpec};

fn marks() -> impl Strategy<Value = DropMarks> {
    (1u64..1000, prop::option::of(1u64..1000), prop::option::of(1u64..1000)).prop_map(|(c, d, e)| {
        let d = d.map(|d| c + d);
        let e = e.and_then(|e| d.map(|d| d + e));
        DropMarks::new([Some(c), d, e])
    })
}

fn schedule() -> impl Strategy<Value = ScheduleSpec> {
    prop_oneof![
        (0.0f64..1.0).prop_map(|a| ScheduleSpec::Constant { a }),
        (0.0f64..1.0, 1u64..100_000).prop_map(|(a, b)| ScheduleSpec::Decay { a, b }),
        (0.0f64..0.5, 0.5f64..1.0, 1u64..9000).prop_map(|(a, b, c)| ScheduleSpec::Cyclical { a, b, c }),
        (0.0f64..1.0, 0u64..9000, marks()).prop_map(|(a, ramp, drops)| ScheduleSpec::Warmup { a, ramp, drops }),
        (0.0f64..0.1, 0.0f64..0.1, 0u32..5, 0.1f64..9.0, 0u64..9000, marks()).prop_map(
            |(epsilon, delta, q, beta, ramp, drops)| ScheduleSpec::SCyc {
                params: SCycParams {
                    epsilon,
                    delta,
                    q,
                    beta,
                    prune_rate: 0.2,
                },
                ramp,
                drops,
            }
        ),
    ]
}

fn rule() -> impl Strategy<Value = ScoringRule> {
    prop_oneof![
        Just(ScoringRule::GlobalMagnitude),
        Just(ScoringRule::LayerMagnitude),
        Just(ScoringRule::GlobalGradient),
        Just(ScoringRule::LayerGradient),
        Just(ScoringRule::StructuredL1),
    ]
}

fn random_grads(net: &Network<f64>, seed: u64) -> Gradients<f64> {
    let mut g = Gradients::zeros_like(net);
    let mut state = seed | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for w in &mut g.weights {
        w.mapv_inplace(|_| next());
    }
    for b in &mut g.biases {
        b.mapv_inplace(|_| next());
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn schedules_round_trip_through_text(s in schedule()) {
        let text = s.to_string();
        let back: ScheduleSpec = text.parse().unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn configs_round_trip_and_hash_stably(
        hidden in prop::collection::vec(1usize..300, 1..4),
        s in schedule(),
        r in rule(),
        imp in any::<bool>(),
        p in 0.01f64..0.9,
        cycles in 1u32..40,
        seeds in prop::collection::vec(any::<u64>(), 1..6),
        patience in prop::option::of(1usize..30),
    ) {
        let cfg = ExperimentConfig {
            hidden,
            schedule: s.with_prune_rate(p),
            criterion: PruneCriterion { rule: r, imp_rewind: imp },
            prune_rate: p,
            cycles,
            seeds,
            patience,
            optimizer: OptimizerKind::adam(1e-4),
            ..ExperimentConfig::default()
        };
        let text = canonical_config(&cfg);
        let back = parse_config_str(&text, Path::new("/")).unwrap();
        prop_assert_eq!(&back, &cfg);

        let mut lines: Vec<&str> = text.lines().collect();
        lines.reverse();
        let shuffled = parse_config_str(&lines.join("\n"), Path::new("/")).unwrap();
        prop_assert_eq!(config_hash(&shuffled), config_hash(&cfg));
    }

    #[test]
    fn pruning_is_nested_frozen_and_floor_counted(
        widths in prop::collection::vec(2usize..12, 3..5),
        r in rule(),
        p in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        let mut net = Network::<f64>::new(&widths, false, seed).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.9, 1e-4));
        let mut history = vec![net.masks().to_vec()];
        for cycle in 1..=4u32 {
            let grads = random_grads(&net, seed ^ cycle as u64);
            let alive_before: usize = net.masks().iter().map(|m| m.iter().filter(|&&a| a).count()).sum();
            prune_step(&mut net, PruneCriterion::new(r), p, Some(&grads), cycle).unwrap();
            let alive_after: usize = net.masks().iter().map(|m| m.iter().filter(|&&a| a).count()).sum();
            if r == ScoringRule::GlobalMagnitude || r == ScoringRule::GlobalGradient {
                prop_assert_eq!(alive_before - alive_after, (p * alive_before as f64).floor() as usize);
            }
            prop_assert!(masks_nested(history.last().unwrap(), net.masks()));
            history.push(net.masks().to_vec());

            // training steps never revive a pruned weight
            for step in 0..3 {
                let mut g = random_grads(&net, seed.wrapping_add(step));
                net.freeze_gradients(&mut g);
                opt.step(&mut net, &g, 0.5).unwrap();
                for (layer, mask) in net.layers().iter().zip(net.masks()) {
                    for (w, &alive) in layer.weights.iter().zip(mask) {
                        prop_assert!(alive || w.to_bits() == 0);
                    }
                }
            }
        }
        let lambda = lambda_of(net.masks());
        prop_assert!((0.0..=100.0).contains(&lambda));
    }

    #[test]
    fn imp_rewind_restores_the_init_snapshot(
        widths in prop::collection::vec(2usize..10, 3..5),
        p in 0.1f64..0.5,
        seed in any::<u64>(),
    ) {
        let mut net = Network::<f64>::new(&widths, true, seed).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.9, 0.0));
        let g = random_grads(&net, seed);
        opt.step(&mut net, &g, 0.1).unwrap();
        prune_step(&mut net, PruneCriterion::imp(), p, None, 1).unwrap();
        for ((layer, init), mask) in net.layers().iter().zip(net.init_snapshot()).zip(net.masks()) {
            for ((w, w0), &alive) in layer.weights.iter().zip(&init.weights).zip(mask) {
                prop_assert_eq!(w.to_bits(), if alive { w0.to_bits() } else { 0 });
            }
            prop_assert_eq!(&layer.bias, &init.bias);
            prop_assert_eq!(layer.bn.as_ref().map(|b| b.scale.clone()), init.bn.as_ref().map(|b| b.scale.clone()));
        }
    }
}

#[test]
fn structured_removal_matches_the_smaller_network() {
    let mut net = Network::<f64>::new(&[5, 6, 4, 3], false, 11).unwrap();
    for l in 0..3 {
        net.layer_mut(l).bias.mapv_inplace(|_| 0.05);
    }
    prune_step(&mut net, PruneCriterion::new(ScoringRule::StructuredL1), 0.34, None, 1).unwrap();
    let keep: Vec<Vec<usize>> = (0..2).map(|l| scyc::prune::alive_neurons(&net, l)).collect();
    assert_eq!(keep[0].len(), 4);
    assert_eq!(keep[1].len(), 3);

    let mut small = Vec::new();
    let mut cols: Vec<usize> = (0..5).collect();
    for (l, layer) in net.layers().iter().enumerate() {
        let rows = if l < 2 { keep[l].clone() } else { (0..3).collect() };
        let w = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| layer.weights[[rows[i], cols[j]]]);
        let b = rows.iter().map(|&i| layer.bias[i]).collect();
        small.push(scyc::nn::DenseLayer::new(w, b));
        cols = rows;
    }
    let small = Network::from_layers(small).unwrap();
    let x = Array2::from_shape_fn((7, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
    let a = net.forward(x.view(), scyc::nn::Mode::Eval).unwrap();
    let b = small.forward(x.view(), scyc::nn::Mode::Eval).unwrap();
    for (u, v) in a.logits().iter().zip(b.logits()) {
        assert!((u - v).abs() < 1e-12, "{u} vs {v}");
    }
}
