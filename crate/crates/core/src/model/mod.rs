//! Plain and residual network construction, forward/backward, and the
//! index-set residual merge used by channel-pruned blocks.

mod arch;
mod layers;
mod network;
mod residual;

pub use arch::{ArchSpec, BlockSpec, LayerKind, LayerSpec, ShortcutSpec};
pub use layers::{Affine, ConvBn};
pub use network::{
    build_plain_cnn, build_resnet, BasicBlock, BlockTrace, ForwardCache, Gradients, Mode, Model, Stage,
};
pub use residual::{residual_add, residual_add_grad};

use crate::error::Result;
use crate::rng;
use crate::tensor::gradcheck::{grad_check, GradCheckOptions};
use crate::tensor::{softmax_cross_entropy, Tensor};
use rand::Rng;

/// Finite-difference check of a whole network (train mode, 64-bit) on a
/// random batch, sampling `opts.max_coords` coordinates per parameter.
pub fn model_grad_check(arch: &ArchSpec, batch: usize, seed: u64, opts: GradCheckOptions) -> Result<f64> {
    let mut model: Model<f64> = Model::from_arch(arch, seed)?;
    model.set_mode(Mode::Train);
    let mut rng = rng::seeded(seed ^ 0x9e37_79b9);
    // randomise BN affine parameters so no gradient is structurally trivial
    model.visit_params_mut(|name, _, t| {
        if name.ends_with(".bn.gamma") {
            *t = rng::uniform_tensor(&mut rng, t.shape(), 0.5, 1.5);
        } else if name.ends_with(".bn.beta") || name == "head.bias" {
            *t = rng::normal_tensor(&mut rng, t.shape(), 0.2);
        }
    });
    let [c, h, w] = arch.input();
    let x: Tensor<f64> = rng::normal_tensor(&mut rng, &[batch, c, h, w], 1.0);
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..arch.classes())).collect();

    let (logits, cache) = model.forward(&x)?;
    let (_, d_logits) = softmax_cross_entropy(&logits, &labels)?;
    let grads = model.backward(&cache, &d_logits)?;

    let mut names = Vec::new();
    let mut values = Vec::new();
    model.visit_params(|name, trainable, t| {
        if trainable {
            names.push(name);
            values.push(t.clone());
        }
    });
    let analytic: Vec<Tensor<f64>> = names.iter().map(|n| grads[n].clone()).collect();

    grad_check(
        |vals| {
            let mut probe = model.clone();
            let mut i = 0;
            probe.visit_params_mut(|_, trainable, t| {
                if trainable {
                    *t = vals[i].clone();
                    i += 1;
                }
            });
            let (logits, _) = probe.forward(&x)?;
            Ok(softmax_cross_entropy(&logits, &labels)?.0)
        },
        &values,
        &analytic,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn plain_single_width_param_count() {
        let m: Model<f32> = build_plain_cnn(&[8], [3, 32, 32], 10, 1).unwrap();
        assert_eq!(m.prunable_layers(), vec!["conv0"]);
        assert_eq!(m.param_count(), 8 * 3 * 9 + 2 * 8 + (8 * 10 + 10));
    }

    #[test]
    fn empty_widths_rejected() {
        let err = build_plain_cnn::<f32>(&[], [3, 8, 8], 10, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 5).unwrap();
        let b: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 5).unwrap();
        let c: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_input_gives_uniform_logits() {
        let mut m: Model<f32> = build_plain_cnn(&[4, 8], [3, 8, 8], 10, 3).unwrap();
        m.set_mode(Mode::Eval);
        let y = m.predict(&Tensor::zeros(&[2, 3, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == y.data()[0]));
    }

    #[test]
    fn resnet_depths() {
        let m: Model<f32> = build_resnet(9, &[16, 32, 64], [3, 32, 32], 10, 0).unwrap();
        assert_eq!(m.depth(), 56);
        let m: Model<f32> = build_resnet(1, &[16, 32, 64], [3, 32, 32], 10, 0).unwrap();
        assert_eq!(m.depth(), 8);
        let projections = m.convs().filter(|c| c.id.ends_with("shortcut")).count();
        assert_eq!(projections, 2);
        assert!(m.convs().filter(|c| c.id.ends_with("shortcut")).all(|c| !c.prunable));
        assert!(!m.conv("stem").unwrap().prunable);
        assert_eq!(m.prunable_layers().len(), 6);
    }

    #[test]
    fn logits_shape_and_eval_determinism() {
        let mut m: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 12, 12], 7, 2).unwrap();
        let x = rng::normal_tensor(&mut rng::seeded(1), &[3, 3, 12, 12], 1.0);
        let (y, _) = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 7]);
        m.set_mode(Mode::Eval);
        let (a, _) = m.forward(&x).unwrap();
        let (b, _) = m.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.predict(&x).unwrap());
    }

    #[test]
    fn input_mismatch_names_first_layer() {
        let mut m: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 2).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 1, 8, 8])).unwrap_err();
        match err {
            Error::Layer { layer, .. } => assert_eq!(layer, "stem"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m: Model<f64> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 2).unwrap();
        let x = rng::normal_tensor(&mut rng::seeded(1), &[2, 3, 8, 8], 1.0);
        let (y, cache) = m.forward(&x).unwrap();
        m.conv_mut("s1.b0.conv1").unwrap().zeroize(&[0]).unwrap();
        let err = m.backward(&cache, &Tensor::zeros(y.shape())).unwrap_err();
        assert!(matches!(err, Error::StaleCache(_)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut m: Model<f64> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 2).unwrap();
        let x = rng::normal_tensor(&mut rng::seeded(1), &[2, 3, 8, 8], 1.0);
        let (y, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, &Tensor::zeros(y.shape())).unwrap();
        let mut trainable = 0;
        m.visit_params(|_, t, _| trainable += t as usize);
        assert_eq!(g.len(), trainable);
        assert!(g.values().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn zeroized_filter_gives_zero_preactivation_map() {
        let mut m: Model<f64> = build_plain_cnn(&[4, 6], [3, 8, 8], 10, 9).unwrap();
        m.conv_mut("conv1").unwrap().weight.slice0_mut(2).fill(0.0);
        let x = rng::normal_tensor(&mut rng::seeded(4), &[2, 3, 8, 8], 1.0);
        let pooled = crate::tensor::max_pool2x2(
            &crate::tensor::relu(&m.conv("conv0").unwrap().infer(&x, m.bn_params()).unwrap()),
        )
        .unwrap()
        .0;
        let z = crate::tensor::conv2d(&pooled, &m.conv("conv1").unwrap().weight, 1, 1).unwrap();
        for s in 0..2 {
            assert!(z.slice0(s)[2 * 16..3 * 16].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn closed_form_resnet56_params() {
        let m: Model<f32> = build_resnet(9, &[16, 32, 64], [3, 32, 32], 10, 0).unwrap();
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + 2 * cout;
        let mut expect = conv(3, 16, 3);
        let mut c = 16;
        for w in [16, 32, 64] {
            for b in 0..9 {
                expect += conv(c, w, 3) + conv(w, w, 3);
                if b == 0 && c != w {
                    expect += conv(c, w, 1);
                }
                c = w;
            }
        }
        expect += 64 * 10 + 10;
        assert_eq!(m.param_count(), expect);
        let from_specs: usize = m.layer_specs().unwrap().iter().map(LayerSpec::param_count).sum();
        assert_eq!(from_specs, expect);
    }

    #[test]
    fn tiny_resnet_gradient_check() {
        let arch = ArchSpec::resnet(1, &[2, 4, 4], [3, 8, 8], 5);
        let opts = GradCheckOptions {
            max_coords: Some(12),
            ..GradCheckOptions::default()
        };
        let err = model_grad_check(&arch, 3, 11, opts).unwrap();
        assert!(err < 1e-3, "max rel error {err}");
    }
}
