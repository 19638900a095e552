//! Dense tensors and the fixed layer set (forward and backward).
//!
//! Image tensors use the `[N, C, H, W]` row-major layout throughout.

mod activation;
mod affine;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod loss;
mod optim;
pub mod par;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{
    global_avg_pool, global_avg_pool_grad, max_pool2x2, max_pool2x2_grad, relu, relu_grad,
    relu_inplace,
};
pub use affine::{affine, affine_grad};
pub use batchnorm::{batchnorm, batchnorm_grad, BatchNormCache, BnMode, BnParams, BnStats};
pub use conv::{conv2d, conv2d_grad, conv_out_extent};
pub use loss::softmax_cross_entropy;
pub use optim::{sgd_step, sgd_update, SgdParams};

/// Floating point element stored in a [`Tensor`].
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    /// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n`, all row-major.
    /// `a_t` / `b_t` read the operand as stored transposed (`k×m` / `n×k`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

fn gemm_strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $kernel:path) => {
        impl Element for $t {
            const DTYPE: Dtype = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, a_t);
                let (rsb, csb) = gemm_strides(k, n, b_t);
                // SAFETY: the asserted slice lengths cover every index touched
                // for the given extents and strides.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, Dtype::F32, matrixmultiply::sgemm);
impl_element!(f64, Dtype::F64, matrixmultiply::dgemm);

/// Dense row-major array. `shape.iter().product() == data.len()` and every
/// extent is at least one.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Geometry {
                op: "tensor",
                msg: format!("extents must be >= 1, got {shape:?}"),
            });
        }
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_f64s(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Geometry {
                op: "dims4",
                msg: format!("expected a rank-4 tensor, got {:?}", self.shape),
            }),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::Geometry {
                op: "dims2",
                msg: format!("expected a rank-2 tensor, got {:?}", self.shape),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != self.data.len() || shape.contains(&0) {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dim("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elements per leading-axis slice.
    pub fn stride0(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    /// Row `i` along the leading axis.
    pub fn slice0(&self, i: usize) -> &[T] {
        let s = self.stride0();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn slice0_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.stride0();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// New tensor made of the given leading-axis rows, in order.
    pub fn select0(&self, rows: &[usize]) -> Result<Self> {
        let s = self.stride0();
        let mut data = Vec::with_capacity(rows.len() * s);
        for &r in rows {
            if r >= self.shape[0] {
                return Err(Error::Index(format!(
                    "row {r} out of range for extent {}",
                    self.shape[0]
                )));
            }
            data.extend_from_slice(self.slice0(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self::from_vec(&shape, data)
    }

    /// New tensor keeping only the given indices along axis 1.
    pub fn select1(&self, cols: &[usize]) -> Result<Self> {
        if self.shape.len() < 2 {
            return Err(Error::dim("select1", &self.shape, &[0, 0]));
        }
        let outer = self.shape[0];
        let c = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Index(format!(
                "column {bad} out of range for extent {c}"
            )));
        }
        let mut data = Vec::with_capacity(outer * cols.len() * inner);
        for o in 0..outer {
            let base = o * c * inner;
            for &j in cols {
                data.extend_from_slice(&self.data[base + j * inner..base + (j + 1) * inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[1] = cols.len();
        Self::from_vec(&shape, data)
    }
}

/// A parameter value together with its gradient, when one has been computed.
#[derive(Debug, Clone)]
pub struct GradPair<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Element> GradPair<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { value, grad: None }
    }

    pub fn set_grad(&mut self, grad: Tensor<T>) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::dim("grad_pair", self.value.shape(), grad.shape()));
        }
        self.grad = Some(grad);
        Ok(())
    }
}
