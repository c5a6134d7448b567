use std::fmt::Debug;
use std::iter::Sum;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};
use crate::planes::Planes;

/// Scalar type the networks compute in.
pub trait Real:
    Float + FromPrimitive + LinalgScalar + Default + Debug + Sum + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

/// Activations stored channel-major across the batch: `[C, N, H, W]`.
///
/// With this layout a convolution is one GEMM whose output is already in
/// place, and channel concatenation is a plain append.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Elements per channel (all batch items).
    pub fn channel_len(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.channels, self.batch, self.height, self.width)
            == (other.channels, other.batch, other.height, other.width)
    }

    pub fn plane(&self, c: usize, n: usize) -> &[T] {
        let p = self.plane_len();
        let start = (c * self.batch + n) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, c: usize, n: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (c * self.batch + n) * p;
        &mut self.data[start..start + p]
    }

    /// Packs one stack per batch item.
    pub fn from_planes(items: &[Planes<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (c, h, w) = first.shape();
        let mut out = Self::zeros(c, items.len(), h, w);
        for (n, item) in items.iter().enumerate() {
            if item.shape() != (c, h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "batch item {n} is {:?}, expected {:?}",
                    item.shape(),
                    (c, h, w)
                )));
            }
            for ch in 0..c {
                out.plane_mut(ch, n).copy_from_slice(item.plane(ch));
            }
        }
        Ok(out)
    }

    pub fn item(&self, n: usize) -> Planes<T> {
        let mut data = Vec::with_capacity(self.channels * self.plane_len());
        for c in 0..self.channels {
            data.extend_from_slice(self.plane(c, n));
        }
        Planes::new(self.channels, self.height, self.width, data).expect("consistent shape")
    }

    /// Channel-axis concatenation.
    pub fn concat(parts: &[&Tensor<T>]) -> Self {
        let first = parts[0];
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            debug_assert_eq!((p.batch, p.height, p.width), (first.batch, first.height, first.width));
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Self {
            channels,
            batch: first.batch,
            height: first.height,
            width: first.width,
            data,
        }
    }

    /// Splits channels at `at`.
    pub fn split(&self, at: usize) -> (Self, Self) {
        let cut = at * self.channel_len();
        let part = |channels, data: &[T]| Self {
            channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: data.to_vec(),
        };
        (
            part(at, &self.data[..cut]),
            part(self.channels - at, &self.data[cut..]),
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a = *a + b);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| U::from(v).unwrap()).collect(),
        }
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` over row-major slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    beta: T,
) {
    let a_view = if a_transposed {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let b_view = if b_transposed {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut c_view = ArrayViewMut2::from_shape((m, n), c).unwrap();
    general_mat_mul(T::one(), &a_view, &b_view, beta, &mut c_view);
}
