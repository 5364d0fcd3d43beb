//! Dense 4-D tensors in NCHW row-major layout.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// Real scalar type the kernels are generic over.
///
/// `f32` is the runtime precision; `f64` is the twin used for finite-difference
/// and oracle checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// A batch of flat feature vectors, `(n, c, 1, 1)`.
    pub const fn vector(n: usize, c: usize) -> Self {
        Shape { n, c, h: 1, w: 1 }
    }

    pub const fn scalar() -> Self {
        Shape { n: 1, c: 1, h: 1, w: 1 }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_valid(&self) -> bool {
        self.n >= 1 && self.c >= 1 && self.h >= 1 && self.w >= 1
    }

    pub fn with_n(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(shape.is_valid(), "tensor dims must be >= 1, got {shape}");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if !shape.is_valid() {
            return Err(dim_err!("tensor dims must be >= 1, got {shape}"));
        }
        if data.len() != shape.numel() {
            return Err(dim_err!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        t.data[i] = f(n, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            })
            .collect();
        Tensor { shape, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::of(rng.random_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// The `h×w` plane of channel `c` in item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape.item();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(dim_err!("cannot reshape {} into {shape}", self.shape));
        }
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err!("shape mismatch {} vs {}", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_dims() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 8]).is_ok());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(0, 2, 2, 2), vec![]).is_err());
    }

    #[test]
    fn layout_is_nchw_row_major() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 3, 4, 5), |n, c, h, w| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        });
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[5], 10.0);
        assert_eq!(t.data()[20], 100.0);
        assert_eq!(t.data()[60], 1000.0);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.plane(1, 2)[0], 1200.0);
    }
}
