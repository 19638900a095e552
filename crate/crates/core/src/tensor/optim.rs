use super::{Element, GradPair, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One momentum-SGD step on a single tensor:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
pub fn sgd_step<T: Element>(
    value: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    p: SgdParams,
) -> Result<()> {
    if grad.shape() != value.shape() || velocity.shape() != value.shape() {
        return Err(Error::dim("sgd_step", value.shape(), grad.shape()));
    }
    if p.lr < 0.0 {
        return Err(Error::Config(format!("learning rate must be >= 0, got {}", p.lr)));
    }
    let (lr, mu, wd) = (T::of(p.lr), T::of(p.momentum), T::of(p.weight_decay));
    for ((w, &g), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = mu * *v + g + wd * *w;
        *w = *w - lr * *v;
    }
    Ok(())
}

/// Applies [`sgd_step`] to every pair that carries a gradient. `velocity`
/// is allocated (zeros) on first use and must stay aligned with `params`.
pub fn sgd_update<T: Element>(
    params: &mut [GradPair<T>],
    velocity: &mut Vec<Tensor<T>>,
    p: SgdParams,
) -> Result<()> {
    if velocity.is_empty() {
        velocity.extend(params.iter().map(|gp| Tensor::zeros(gp.value.shape())));
    }
    if velocity.len() != params.len() {
        return Err(Error::dim("sgd_update", &[params.len()], &[velocity.len()]));
    }
    for (gp, v) in params.iter_mut().zip(velocity.iter_mut()) {
        if let Some(g) = &gp.grad {
            sgd_step(&mut gp.value, g, v, p)?;
        }
    }
    Ok(())
}
