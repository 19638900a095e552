use filterprune::analysis::{compare_flops, count_flops};
use filterprune::model::{build_plain_cnn, build_resnet, Model};
use filterprune::prune::{extract_compact, prune_step, PruneConfig, PruneMode, PruneSchedule};
use filterprune::rng;
use filterprune::tensor::{conv2d, relu, sgd_step, softmax_cross_entropy, SgdParams};
use filterprune::Tensor;
use proptest::prelude::*;

fn seeded_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    rng::normal_tensor(&mut rng::seeded(seed), shape, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, stride in 1usize..3) {
        let x = seeded_tensor(seed, &[2, 3, 7, 7]);
        let y = seeded_tensor(seed ^ 1, &[2, 3, 7, 7]);
        let w = seeded_tensor(seed ^ 2, &[4, 3, 3, 3]);
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = conv2d(&mix, &w, stride, 1).unwrap();
        let rhs = conv2d(&x, &w, stride, 1).unwrap()
            .zip_map(&conv2d(&y, &w, stride, 1).unwrap(), |p, q| a * p + b * q)
            .unwrap();
        let scale = lhs.max_abs().max(1.0);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-6 * scale);
    }

    #[test]
    fn cross_entropy_nonnegative(seed in any::<u64>(), classes in 2usize..12) {
        let logits = seeded_tensor(seed, &[5, classes]).scale(10.0);
        let labels: Vec<usize> = (0..5).map(|i| (seed as usize + i) % classes).collect();
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        let (uniform, _) = softmax_cross_entropy(&Tensor::<f64>::full(&[5, classes], 0.7), &labels).unwrap();
        prop_assert!((uniform - (classes as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn relu_idempotent(seed in any::<u64>()) {
        let x = seeded_tensor(seed, &[3, 2, 4, 4]);
        prop_assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn sgd_is_deterministic(seed in any::<u64>(), lr in 0.0f64..1.0, mu in 0.0f64..0.99) {
        let p = SgdParams { lr, momentum: mu, weight_decay: 1e-4 };
        let run = || {
            let mut w = seeded_tensor(seed, &[17]);
            let mut v = seeded_tensor(seed ^ 5, &[17]);
            for k in 0..3 {
                sgd_step(&mut w, &seeded_tensor(seed ^ (10 + k), &[17]), &mut v, p).unwrap();
            }
            (w, v)
        };
        let (a, b) = (run(), run());
        prop_assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn compact_flops_never_exceed_masked(seed in 0u64..1000, rate in 0.0f64..0.9, plain in any::<bool>()) {
        let mut m: Model<f32> = if plain {
            build_plain_cnn(&[6, 10, 12], [3, 8, 8], 4, seed).unwrap()
        } else {
            build_resnet(1, &[6, 10, 12], [3, 8, 8], 4, seed).unwrap()
        };
        let cfg = PruneConfig::new(PruneMode::Soft, rate, 1);
        let mask = prune_step(&mut m, &cfg, &PruneSchedule::for_config(&cfg).unwrap(), 1).unwrap();
        let c = extract_compact(&m, &mask).unwrap();
        let full = count_flops(&m).unwrap().baseline_total;
        let small = compare_flops(&m, &c.model).unwrap().pruned_total;
        prop_assert!(small <= full);
        prop_assert_eq!(small == full, mask.is_empty());
    }
}

#[test]
fn unpruned_merge_is_plain_addition_in_every_block() {
    let m: Model<f64> = build_resnet(2, &[4, 8], [3, 8, 8], 3, 1).unwrap();
    let x = seeded_tensor(4, &[2, 3, 8, 8]);
    let (_, trace) = m.predict_traced(&x).unwrap();
    assert_eq!(trace.len(), 4);
    for t in trace {
        let sum = relu(&t.residual.add(&t.branch).unwrap());
        assert_eq!(sum, t.output);
    }
}
