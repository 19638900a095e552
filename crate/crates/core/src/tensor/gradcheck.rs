//! Central finite-difference checks of the analytic backward passes.

use super::{
    affine, affine_grad, batchnorm, batchnorm_grad, conv2d, conv2d_grad, global_avg_pool,
    global_avg_pool_grad, max_pool2x2, max_pool2x2_grad, relu, relu_grad, softmax_cross_entropy,
    BnMode, BnParams, BnStats, Tensor,
};
use crate::error::Result;
use crate::rng::{self, DetRng};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between `analytic[i]` and the central difference
/// `(f(x + ε) − f(x − ε)) / 2ε` taken coordinate-wise over `inputs[i]`.
pub fn grad_check<F>(
    mut f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<f64>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut rng = rng::seeded(opts.seed);
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[i].shape(), "gradient shape of input {i}");
        for c in coordinates(&mut rng, inputs[i].len(), opts.max_coords) {
            let orig = work[i].data()[c];
            work[i].data_mut()[c] = orig + opts.eps;
            let plus = f(&work)?;
            work[i].data_mut()[c] = orig - opts.eps;
            let minus = f(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            worst = worst.max(rel_error(grad.data()[c], numeric));
        }
    }
    Ok(worst)
}

fn coordinates(rng: &mut DetRng, len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|_| rng.random_range(0..len)).collect(),
        _ => (0..len).collect(),
    }
}

fn project(t: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Result of checking one layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
}

/// Checks every layer-level backward pass on random 64-bit inputs. Each
/// layer output is contracted against a fixed random tensor so the check
/// covers the full Jacobian-vector product.
pub fn layer_suite(seed: u64, eps: f64) -> Result<Vec<LayerCheck>> {
    let mut rng = rng::seeded(seed);
    let opts = GradCheckOptions {
        eps,
        max_coords: None,
        seed,
    };
    let mut out = Vec::new();

    for (name, stride, pad) in [("conv2d", 1, 1), ("conv2d_stride2", 2, 1), ("conv2d_1x1", 2, 0)] {
        let k = if pad == 0 { 1 } else { 3 };
        let x = rng::normal_tensor::<f64>(&mut rng, &[2, 3, 8, 8], 1.0);
        let w = rng::normal_tensor::<f64>(&mut rng, &[4, 3, k, k], 1.0);
        let y = conv2d(&x, &w, stride, pad)?;
        let r = rng::normal_tensor::<f64>(&mut rng, y.shape(), 1.0);
        let (dx, dw) = conv2d_grad(&x, &w, &r, stride, pad)?;
        let err = grad_check(
            |v| Ok(project(&conv2d(&v[0], &v[1], stride, pad)?, &r)),
            &[x, w],
            &[dx, dw],
            opts,
        )?;
        out.push(LayerCheck { name, max_rel_error: err });
    }

    for (name, mode) in [("batchnorm_train", BnMode::Train), ("batchnorm_eval", BnMode::Eval)] {
        let x = rng::normal_tensor::<f64>(&mut rng, &[4, 2, 5, 5], 2.0).map(|v| v + 0.5);
        let gamma = rng::uniform_tensor::<f64>(&mut rng, &[2], 0.5, 1.5);
        let beta = rng::normal_tensor::<f64>(&mut rng, &[2], 1.0);
        let mut stats = BnStats::new(2);
        stats.running_mean = rng::normal_tensor(&mut rng, &[2], 0.5);
        stats.running_var = rng::uniform_tensor(&mut rng, &[2], 0.5, 2.0);
        let p = BnParams::default();
        let (y, cache) = batchnorm(&x, &gamma, &beta, &mut stats.clone(), p, mode)?;
        let r = rng::normal_tensor::<f64>(&mut rng, y.shape(), 1.0);
        let (dx, dg, db) = batchnorm_grad(&r, &gamma, &cache)?;
        let err = grad_check(
            |v| {
                let (y, _) = batchnorm(&v[0], &v[1], &v[2], &mut stats.clone(), p, mode)?;
                Ok(project(&y, &r))
            },
            &[x, gamma, beta],
            &[dx, dg, db],
            opts,
        )?;
        out.push(LayerCheck { name, max_rel_error: err });
    }

    {
        // keep inputs away from the kink at zero
        let x = rng::normal_tensor::<f64>(&mut rng, &[2, 3, 4, 4], 1.0)
            .map(|v| if v.abs() < 0.1 { v + 0.2f64.copysign(v) } else { v });
        let r = rng::normal_tensor::<f64>(&mut rng, x.shape(), 1.0);
        let dx = relu_grad(&x, &r)?;
        let err = grad_check(|v| Ok(project(&relu(&v[0]), &r)), &[x], &[dx], opts)?;
        out.push(LayerCheck { name: "relu", max_rel_error: err });
    }

    {
        let x = rng::normal_tensor::<f64>(&mut rng, &[2, 3, 4, 5], 1.0);
        let r = rng::normal_tensor::<f64>(&mut rng, &[2, 3], 1.0);
        let dx = global_avg_pool_grad(x.shape(), &r)?;
        let err = grad_check(|v| Ok(project(&global_avg_pool(&v[0])?, &r)), &[x], &[dx], opts)?;
        out.push(LayerCheck { name: "global_avg_pool", max_rel_error: err });
    }

    {
        let x = rng::normal_tensor::<f64>(&mut rng, &[2, 2, 4, 4], 1.0);
        let (y, arg) = max_pool2x2(&x)?;
        let r = rng::normal_tensor::<f64>(&mut rng, y.shape(), 1.0);
        let dx = max_pool2x2_grad(x.shape(), &arg, &r)?;
        let err = grad_check(|v| Ok(project(&max_pool2x2(&v[0])?.0, &r)), &[x], &[dx], opts)?;
        out.push(LayerCheck { name: "max_pool2x2", max_rel_error: err });
    }

    {
        let x = rng::normal_tensor::<f64>(&mut rng, &[3, 5], 1.0);
        let w = rng::normal_tensor::<f64>(&mut rng, &[4, 5], 1.0);
        let b = rng::normal_tensor::<f64>(&mut rng, &[4], 1.0);
        let r = rng::normal_tensor::<f64>(&mut rng, &[3, 4], 1.0);
        let (dx, dw, db) = affine_grad(&x, &w, &r)?;
        let err = grad_check(
            |v| Ok(project(&affine(&v[0], &v[1], &v[2])?, &r)),
            &[x, w, b],
            &[dx, dw, db],
            opts,
        )?;
        out.push(LayerCheck { name: "affine", max_rel_error: err });
    }

    {
        let logits = rng::normal_tensor::<f64>(&mut rng, &[4, 6], 2.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
        let (_, d) = softmax_cross_entropy(&logits, &labels)?;
        let err = grad_check(
            |v| Ok(softmax_cross_entropy(&v[0], &labels)?.0),
            &[logits],
            &[d],
            opts,
        )?;
        out.push(LayerCheck { name: "softmax_cross_entropy", max_rel_error: err });
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::<f64>::from_f64s(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let coef = [3.0, -2.0, 0.25];
        let analytic = Tensor::from_f64s(&[3], &coef).unwrap();
        let err = grad_check(
            |v| Ok(v[0].data().iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + 7.0),
            &[x],
            &[analytic],
            // dyadic step keeps every perturbed evaluation exact
            GradCheckOptions { eps: 1.0 / 65536.0, ..Default::default() },
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::<f64>::from_f64s(&[1], &[1.5]).unwrap();
        let wrong = Tensor::from_f64s(&[1], &[1.0]).unwrap();
        let err = grad_check(|v| Ok(v[0].data()[0].powi(2)), &[x], &[wrong], GradCheckOptions::default())
            .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn every_layer_within_tolerance() {
        for check in layer_suite(7, 1e-5).unwrap() {
            assert!(check.max_rel_error < 1e-4, "{}: {}", check.name, check.max_rel_error);
        }
    }
}
