use super::{Element, Tensor};
use crate::error::{Error, Result};

/// `input · weightᵀ + bias` for `input: [N, Din]`, `weight: [Dout, Din]`.
pub fn affine<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, din] = input.dims2()?;
    let [dout, wdin] = weight.dims2()?;
    if wdin != din {
        return Err(Error::dim("affine", input.shape(), weight.shape()));
    }
    if bias.shape() != [dout] {
        return Err(Error::dim("affine", weight.shape(), bias.shape()));
    }
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(n, din, dout, input.data(), false, weight.data(), true, T::one(), &mut out);
    Tensor::from_vec(&[n, dout], out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn affine_grad<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    d_output: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, din] = input.dims2()?;
    let [dout, wdin] = weight.dims2()?;
    if wdin != din {
        return Err(Error::dim("affine_grad", input.shape(), weight.shape()));
    }
    if d_output.shape() != [n, dout] {
        return Err(Error::dim("affine_grad", &[n, dout], d_output.shape()));
    }
    let dy = d_output.data();
    let mut dx = vec![T::zero(); n * din];
    T::gemm(n, dout, din, dy, false, weight.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); dout * din];
    T::gemm(dout, n, din, dy, true, input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); dout];
    for row in dy.chunks(dout) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    Ok((
        Tensor::from_vec(&[n, din], dx)?,
        Tensor::from_vec(&[dout, din], dw)?,
        Tensor::from_vec(&[dout], db)?,
    ))
}
