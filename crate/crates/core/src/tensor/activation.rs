use super::{Element, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn relu_inplace<T: Element>(t: &mut Tensor<T>) {
    for x in t.data_mut() {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

/// Passes `d_output` where `input > 0`; the subgradient at zero is zero.
pub fn relu_grad<T: Element>(input: &Tensor<T>, d_output: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(d_output, |x, d| if x > T::zero() { d } else { T::zero() })
}

/// `[N, C, H, W]` → `[N, C]` spatial mean.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    let plane = h * w;
    let inv = T::of(1.0 / plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_grad<T: Element>(
    input_shape: &[usize],
    d_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, plane) = match input_shape {
        [n, c, h, w] => (*n, *c, h * w),
        _ => return Err(Error::dim("global_avg_pool_grad", input_shape, d_output.shape())),
    };
    if d_output.shape() != [n, c] {
        return Err(Error::dim("global_avg_pool_grad", input_shape, d_output.shape()));
    }
    let inv = T::of(1.0 / plane as f64);
    let mut data = Vec::with_capacity(n * c * plane);
    for &d in d_output.data() {
        data.extend(std::iter::repeat_n(d * inv, plane));
    }
    Tensor::from_vec(input_shape, data)
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Returns the pooled tensor and the flat input index of every maximum.
pub fn max_pool2x2<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::Geometry {
            op: "max_pool2x2",
            msg: format!("spatial extent {h}x{w} is smaller than the window"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], out)?, arg))
}

pub fn max_pool2x2_grad<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    d_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != d_output.len() {
        return Err(Error::dim("max_pool2x2_grad", &[argmax.len()], d_output.shape()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(d_output.data()) {
        d[i] = d[i] + g;
    }
    Ok(dx)
}
