//! Filter ranking, the asymptotic rate schedule, soft/hard pruning steps
//! and compact-model extraction.

mod config;
mod mask;
mod schedule;
mod select;

pub use config::{LayerFilter, PruneConfig, PruneMode, Rounding};
pub use mask::{extract_compact, hard_prune, prune_step, zeroize_filters, CompactModel, MaskState};
pub use schedule::{solve_schedule, PruneSchedule};
pub use select::{filter_norm, num_to_prune, select_prune_set};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::{build_resnet, residual_add, ArchSpec, Mode, Model};
    use crate::rng;
    use crate::tensor::softmax_cross_entropy;

    fn tiny(seed: u64) -> Model<f64> {
        build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, seed).unwrap()
    }

    #[test]
    fn zeroize_sets_exact_zeros() {
        let mut m = tiny(1);
        zeroize_filters(&mut m, "s2.b0.conv1", &[1, 5]).unwrap();
        let c = m.conv("s2.b0.conv1").unwrap();
        let norms = filter_norm(&c.weight, 2).unwrap();
        assert_eq!((norms[1], norms[5]), (0.0, 0.0));
        assert!(norms.iter().enumerate().all(|(j, &n)| (n == 0.0) == (j == 1 || j == 5)));
        assert_eq!((c.gamma.data()[5], c.beta.data()[5]), (0.0, 0.0));
    }

    #[test]
    fn zeroize_empty_is_noop() {
        let mut m = tiny(1);
        let before = m.clone();
        zeroize_filters(&mut m, "s1.b0.conv2", &[]).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn zeroize_policy_errors() {
        let mut m = tiny(1);
        assert!(matches!(zeroize_filters(&mut m, "nope", &[0]), Err(Error::UnknownLayer(_))));
        assert!(matches!(zeroize_filters(&mut m, "stem", &[0]), Err(Error::NotPrunable(_))));
        assert!(matches!(
            zeroize_filters(&mut m, "s2.b0.shortcut", &[0]),
            Err(Error::NotPrunable(_))
        ));
        assert!(matches!(zeroize_filters(&mut m, "s1.b0.conv1", &[4]), Err(Error::Index(_))));
    }

    #[test]
    fn zeroized_channel_contributes_nothing_to_block() {
        let mut m = tiny(2);
        let x = rng::normal_tensor(&mut rng::seeded(9), &[2, 3, 8, 8], 1.0);
        m.forward(&x).unwrap();
        m.set_mode(Mode::Eval);
        zeroize_filters(&mut m, "s1.b0.conv2", &[2]).unwrap();
        let stem = m.conv("stem").unwrap();
        let r = crate::tensor::relu(&stem.infer(&x, m.bn_params()).unwrap());
        let b = m.blocks().next().unwrap();
        let h = crate::tensor::relu(&b.conv1.infer(&r, m.bn_params()).unwrap());
        let branch = b.conv2.infer(&h, m.bn_params()).unwrap();
        let full = residual_add(&r, &branch, &[0, 1, 2, 3]).unwrap();
        let narrow = residual_add(&r, &branch.select1(&[0, 1, 3]).unwrap(), &[0, 1, 3]).unwrap();
        assert_eq!(full, narrow);
    }

    /// Gradients of (weight row, γ, β) for filter 1 of `id` after `prep`.
    fn filter_grads(id: &str, prep: impl FnOnce(&mut Model<f64>)) -> [f64; 3] {
        let mut m = tiny(4);
        prep(&mut m);
        let x = rng::normal_tensor(&mut rng::seeded(5), &[4, 3, 8, 8], 1.0);
        let (logits, cache) = m.forward(&x).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &[0, 3, 7, 9]).unwrap();
        let g = m.backward(&cache, &d).unwrap();
        let row = g[&format!("{id}.weight")].slice0(1).iter().map(|v| v.abs()).fold(0.0, f64::max);
        [row, g[&format!("{id}.bn.gamma")].data()[1], g[&format!("{id}.bn.beta")].data()[1]]
    }

    #[test]
    fn zero_filter_with_live_bias_gets_gradient() {
        let id = "s1.b0.conv1";
        let [w, ..] = filter_grads(id, |m| {
            let c = m.conv_mut(id).unwrap();
            c.weight.slice0_mut(1).fill(0.0);
            c.beta.data_mut()[1] = 0.5;
        });
        assert!(w > 0.0);
    }

    #[test]
    fn zeroized_branch_output_keeps_bias_gradient() {
        // the merged sum is nonzero, so β of a zeroized second conv is live
        let id = "s1.b0.conv2";
        let [w, gamma, beta] = filter_grads(id, |m| zeroize_filters(m, id, &[1]).unwrap());
        assert_eq!((w, gamma), (0.0, 0.0));
        assert!(beta.abs() > 0.0);
    }

    #[test]
    fn zeroized_inner_channel_is_gradient_dead() {
        // output is exactly 0 and ReLU'(0) = 0; only momentum can revive it
        let id = "s1.b0.conv1";
        let g = filter_grads(id, |m| zeroize_filters(m, id, &[1]).unwrap());
        assert_eq!(g, [0.0; 3]);
    }

    #[test]
    fn prune_step_zeroizes_exact_counts() {
        let mut m = tiny(3);
        let cfg = PruneConfig::new(PruneMode::Soft, 0.3, 10);
        let s = PruneSchedule::for_config(&cfg).unwrap();
        let before = m.clone();
        let mask = prune_step(&mut m, &cfg, &s, 4).unwrap();
        assert_eq!(mask.epoch, 4);
        assert_eq!(mask.layers.len(), 6);
        for (id, idx) in &mask.layers {
            let n = m.conv(id).unwrap().out_channels();
            assert_eq!(idx.len(), num_to_prune(n, 0.3, Rounding::PruneFloor));
            let norms = filter_norm(&m.conv(id).unwrap().weight, 2).unwrap();
            assert_eq!(norms.iter().filter(|&&v| v == 0.0).count(), idx.len());
            let old = filter_norm(&before.conv(id).unwrap().weight, 2).unwrap();
            let max_pruned = idx.iter().map(|&j| old[j]).fold(0.0, f64::max);
            assert!((0..n).filter(|j| !idx.contains(j)).all(|j| old[j] >= max_pruned));
        }
        assert_eq!(mask.remaining(&m).unwrap()["s3.b0.conv2"], 12);
    }

    #[test]
    fn soft_counts_constant_and_asymptotic_counts_grow() {
        let soft = PruneConfig::new(PruneMode::Soft, 0.3, 200);
        let s = PruneSchedule::for_config(&soft).unwrap();
        let counts: Vec<usize> = (0..=200).map(|e| num_to_prune(16, s.rate_at(e).unwrap(), soft.rounding)).collect();
        assert!(counts.iter().all(|&c| c == 4));

        let asfp = PruneConfig::new(PruneMode::AsymptoticSoft, 0.3, 200);
        let s = PruneSchedule::for_config(&asfp).unwrap();
        let counts: Vec<usize> = (0..=200).map(|e| num_to_prune(16, s.rate_at(e).unwrap(), asfp.rounding)).collect();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!((counts[0], counts[200]), (0, 4));
    }

    #[test]
    fn soft_equals_asymptotic_with_equal_endpoints() {
        let soft = PruneConfig::new(PruneMode::Soft, 0.3, 5);
        let asfp = PruneConfig {
            mode: PruneMode::AsymptoticSoft,
            p_min: 0.3,
            ..soft.clone()
        };
        let (mut a, mut b) = (tiny(6), tiny(6));
        let sa = PruneSchedule::for_config(&soft).unwrap();
        let sb = PruneSchedule::for_config(&asfp).unwrap();
        for e in 0..=5 {
            assert_eq!(prune_step(&mut a, &soft, &sa, e).unwrap(), prune_step(&mut b, &asfp, &sb, e).unwrap());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn layer_filter_limits_pruning() {
        let mut m = tiny(3);
        let cfg = PruneConfig {
            layer_filter: LayerFilter::Suffix("conv1".into()),
            ..PruneConfig::new(PruneMode::Soft, 0.5, 10)
        };
        let mask = prune_step(&mut m, &cfg, &PruneSchedule::for_config(&cfg).unwrap(), 1).unwrap();
        assert!(mask.layers.keys().all(|k| k.ends_with("conv1")));
        for id in ["s1.b0.conv2", "s2.b0.conv2", "s3.b0.conv2"] {
            let norms = filter_norm(&m.conv(id).unwrap().weight, 2).unwrap();
            assert!(norms.iter().all(|&n| n > 0.0));
        }
    }

    #[test]
    fn mask_json_form() {
        let mut mask = MaskState::new(7);
        mask.layers.insert("s1.b0.conv1".into(), vec![0, 3]);
        let v: serde_json::Value = serde_json::from_str(&mask.to_json().unwrap()).unwrap();
        assert_eq!(v, serde_json::json!({"epoch": 7, "layers": {"s1.b0.conv1": [0, 3]}}));
        assert_eq!(MaskState::from_json(&mask.to_json().unwrap()).unwrap(), mask);
    }

    #[test]
    fn empty_mask_extraction_is_identity() {
        let mut m: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 2).unwrap();
        m.set_mode(Mode::Eval);
        let c = extract_compact(&m, &MaskState::new(0)).unwrap();
        assert_eq!(c.model, m);
        let x = rng::normal_tensor(&mut rng::seeded(1), &[3, 3, 8, 8], 1.0);
        assert_eq!(m.predict(&x).unwrap(), c.model.predict(&x).unwrap());
    }

    #[test]
    fn compact_matches_masked() {
        let mut m: Model<f32> = build_resnet(1, &[8, 16, 32], [3, 8, 8], 10, 2).unwrap();
        let mut r = rng::seeded(8);
        // populate running statistics so eval mode is non-trivial
        m.forward(&rng::normal_tensor(&mut r, &[8, 3, 8, 8], 1.0)).unwrap();
        let cfg = PruneConfig::new(PruneMode::Soft, 0.3, 1);
        let mask = prune_step(&mut m, &cfg, &PruneSchedule::for_config(&cfg).unwrap(), 1).unwrap();
        m.set_mode(Mode::Eval);
        let c = extract_compact(&m, &mask).unwrap();
        assert!(c.model.param_count() < m.param_count());
        let x = rng::normal_tensor(&mut r, &[20, 3, 8, 8], 1.0);
        let diff = m.predict(&x).unwrap().max_abs_diff(&c.model.predict(&x).unwrap()).unwrap();
        assert!(diff <= 1e-5, "{diff}");
        for b in c.model.blocks() {
            let pruned = &mask.layers[&b.conv2.id];
            let expect: Vec<usize> = (0..b.width()).filter(|j| !pruned.contains(j)).collect();
            assert_eq!(b.index_set(), expect.as_slice());
            assert_eq!(c.index_sets[&b.id], expect);
        }
    }

    #[test]
    fn half_width_block_extraction() {
        let arch = ArchSpec::resnet(1, &[256], [3, 4, 4], 10);
        let mut m: Model<f32> = Model::from_arch(&arch, 0).unwrap();
        let cfg = PruneConfig::new(PruneMode::Soft, 0.5, 1);
        let mask = prune_step(&mut m, &cfg, &PruneSchedule::for_config(&cfg).unwrap(), 1).unwrap();
        let c = extract_compact(&m, &mask).unwrap();
        let b = c.model.blocks().next().unwrap();
        assert_eq!(b.conv2.out_channels(), 128);
        assert_eq!(b.index_set().len(), 128);
        assert_eq!(b.width(), 256);
    }

    #[test]
    fn extraction_rejects_bad_mask() {
        let m = tiny(1);
        let mut mask = MaskState::new(0);
        mask.layers.insert("s1.b0.conv1".into(), vec![9]);
        assert!(matches!(extract_compact(&m, &mask), Err(Error::Extraction(_))));
        let mut mask = MaskState::new(0);
        mask.layers.insert("ghost".into(), vec![0]);
        assert!(matches!(extract_compact(&m, &mask), Err(Error::Extraction(_))));
    }

    #[test]
    fn hard_prune_cases() {
        let m = tiny(1);
        let (c, mask) = hard_prune(&m, &PruneConfig::new(PruneMode::Hard, 0.0, 1)).unwrap();
        assert!(mask.is_empty());
        assert_eq!(c.model, m);

        let m: Model<f32> = Model::from_arch(&ArchSpec::resnet56(), 0).unwrap();
        let cfg = PruneConfig {
            rounding: Rounding::KeepFloor,
            ..PruneConfig::new(PruneMode::Hard, 0.4, 1)
        };
        let (c, _) = hard_prune(&m, &cfg).unwrap();
        for b in c.model.blocks() {
            let keep = match b.width() {
                16 => 9,
                32 => 19,
                _ => 38,
            };
            assert_eq!(b.conv1.out_channels(), keep);
            assert_eq!(b.conv2.out_channels(), keep);
        }
        assert!(c.model.param_count() < m.param_count());
    }
}
