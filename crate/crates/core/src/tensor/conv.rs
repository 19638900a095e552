use super::par::{for_each_chunk, map_range};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Samples per backward work unit. Fixed so that weight-gradient partial
/// sums are reduced in the same order whatever the thread count.
const GRAD_CHUNK: usize = 4;

/// Output extent of a convolution along one axis (floor division).
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Geometry {
            op: "conv2d",
            msg: format!("kernel {kernel} and stride {stride} must be positive"),
        });
    }
    let padded = size + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry {
            op: "conv2d",
            msg: format!("kernel {kernel} exceeds padded extent {padded}"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(input: &[usize; 4], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [_, cin, h, w] = *input;
        let (wc, k1, k2) = match weight {
            [_, c, k1, k2] => (*c, *k1, *k2),
            _ => return Err(Error::dim("conv2d", input, weight)),
        };
        if wc != cin || k1 != k2 {
            return Err(Error::dim("conv2d", input, weight));
        }
        Ok(Self {
            cin,
            h,
            w,
            k: k1,
            stride,
            pad,
            ho: conv_out_extent(h, k1, stride, pad)?,
            wo: conv_out_extent(w, k1, stride, pad)?,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let p = self.plane();
        for ci in 0..self.cin {
            let xc = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let drow = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.plane();
        for ci in 0..self.cin {
            let dxc = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = iy as usize * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dxc[base + ix as usize] =
                                    dxc[base + ix as usize] + src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip), no bias.
///
/// `input: [N, Cin, H, W]`, `weight: [Cout, Cin, K, K]` → `[N, Cout, H', W']`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let dims = input.dims4()?;
    let g = Geom::new(&dims, weight.shape(), stride, pad)?;
    let n = dims[0];
    let cout = weight.shape()[0];
    let in_stride = g.cin * g.h * g.w;
    let out_stride = cout * g.plane();
    let mut out = vec![T::zero(); n * out_stride];
    let x = input.data();
    let wt = weight.data();
    for_each_chunk(&mut out, out_stride, |i, o| {
        let xs = &x[i * in_stride..(i + 1) * in_stride];
        if g.is_pointwise() {
            T::gemm(cout, g.patch(), g.plane(), wt, false, xs, false, T::zero(), o);
        } else {
            let mut cols = vec![T::zero(); g.patch() * g.plane()];
            g.im2col(xs, &mut cols);
            T::gemm(cout, g.patch(), g.plane(), wt, false, &cols, false, T::zero(), o);
        }
    });
    Tensor::from_vec(&[n, cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] with respect to its input and weight.
pub fn conv2d_grad<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    d_output: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let dims = input.dims4()?;
    let g = Geom::new(&dims, weight.shape(), stride, pad)?;
    let n = dims[0];
    let cout = weight.shape()[0];
    let expect = [n, cout, g.ho, g.wo];
    if d_output.shape() != expect {
        return Err(Error::dim("conv2d_grad", &expect, d_output.shape()));
    }
    let in_stride = g.cin * g.h * g.w;
    let out_stride = cout * g.plane();
    let x = input.data();
    let dy = d_output.data();
    let wt = weight.data();
    let chunks = n.div_ceil(GRAD_CHUNK);

    let parts = map_range(chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(n);
        let mut dw = vec![T::zero(); weight.len()];
        let mut dx = vec![T::zero(); (hi - lo) * in_stride];
        let mut cols = vec![T::zero(); g.patch() * g.plane()];
        let mut dcols = vec![T::zero(); g.patch() * g.plane()];
        for s in lo..hi {
            let xs = &x[s * in_stride..(s + 1) * in_stride];
            let dys = &dy[s * out_stride..(s + 1) * out_stride];
            let dxs = &mut dx[(s - lo) * in_stride..(s - lo + 1) * in_stride];
            if g.is_pointwise() {
                T::gemm(cout, g.plane(), g.patch(), dys, false, xs, true, T::one(), &mut dw);
                T::gemm(g.patch(), cout, g.plane(), wt, true, dys, false, T::zero(), dxs);
            } else {
                g.im2col(xs, &mut cols);
                T::gemm(cout, g.plane(), g.patch(), dys, false, &cols, true, T::one(), &mut dw);
                T::gemm(g.patch(), cout, g.plane(), wt, true, dys, false, T::zero(), &mut dcols);
                g.col2im_add(&dcols, dxs);
            }
        }
        (dw, dx)
    });

    let mut dw = vec![T::zero(); weight.len()];
    let mut dx = Vec::with_capacity(input.len());
    for (pw, px) in parts {
        for (a, b) in dw.iter_mut().zip(pw) {
            *a = *a + b;
        }
        dx.extend(px);
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(weight.shape(), dw)?,
    ))
}
