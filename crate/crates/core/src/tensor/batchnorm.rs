use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct BnParams {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnParams {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running statistics, updated in place by train-mode passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Element> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: BnMode,
}

fn check_channel(op: &'static str, input: &[usize; 4], t: &Tensor<impl Element>) -> Result<()> {
    if t.shape() != [input[1]] {
        return Err(Error::dim(op, input, t.shape()));
    }
    Ok(())
}

/// Per-channel batch normalisation over `[N, C, H, W]`.
///
/// Train mode normalises by the biased batch variance and folds the unbiased
/// variance into the running estimate; eval mode uses the running estimate.
pub fn batchnorm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut BnStats<T>,
    params: BnParams,
    mode: BnMode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let dims = input.dims4()?;
    let [n, c, h, w] = dims;
    for t in [gamma, beta, &stats.running_mean, &stats.running_var] {
        check_channel("batchnorm", &dims, t)?;
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if params.eps <= 0.0 {
        return Err(Error::Config(format!("batchnorm eps must be > 0, got {}", params.eps)));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);

    for ch in 0..c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sum += x[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sq += x[base..base + plane]
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / count;
                let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                let m = params.momentum;
                let rm = &mut stats.running_mean.data_mut()[ch];
                *rm = T::of((1.0 - m) * rm.as_f64() + m * mean);
                let rv = &mut stats.running_var.data_mut()[ch];
                *rv = T::of((1.0 - m) * rv.as_f64() + m * unbiased);
                (mean, var)
            }
            BnMode::Eval => (
                stats.running_mean.data()[ch].as_f64(),
                stats.running_var.data()[ch].as_f64(),
            ),
        };
        let istd = T::of(1.0 / (var + params.eps).sqrt());
        let mean = T::of(mean);
        let g = gamma.data()[ch];
        let b = beta.data()[ch];
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                let xh = (x[i] - mean) * istd;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
        inv_std.push(istd);
    }

    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BatchNormCache {
            xhat: Tensor::from_vec(input.shape(), xhat)?,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_grad<T: Element>(
    d_output: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if d_output.shape() != cache.xhat.shape() {
        return Err(Error::dim("batchnorm_grad", cache.xhat.shape(), d_output.shape()));
    }
    let dims = d_output.dims4()?;
    check_channel("batchnorm_grad", &dims, gamma)?;
    let [n, c, h, w] = dims;
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let dy = d_output.data();
    let xh = cache.xhat.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];

    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                sum_dy = sum_dy + dy[i];
                sum_dy_xh = sum_dy_xh + dy[i] * xh[i];
            }
        }
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let g = gamma.data()[ch];
        let istd = cache.inv_std[ch];
        match cache.mode {
            BnMode::Train => {
                let scale = g * istd / count;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        dx[i] = scale * (count * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                    }
                }
            }
            BnMode::Eval => {
                let scale = g * istd;
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        dx[i] = scale * dy[i];
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_vec(d_output.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}
