//! Dense numeric substrate: the [`Real`] scalar trait, row-major [`Tensor2`],
//! activations, losses, optimizers, seeded randomness and a finite-difference
//! gradient checker.
//!
//! Training runs in `f32`; every model type is generic over [`Real`] so the
//! same code path can be instantiated in `f64` for gradient verification.

mod gradcheck;
mod optim;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use gradcheck::{gradient_check, relative_error};
pub use optim::{global_norm, sgd_step, Optimizer, OptimizerKind};
pub use rng::{derive_seed, Rng};

/// Lower clamp applied to a probability before taking its logarithm.
pub const LOG_EPSILON: f64 = 1e-12;

/// Floating-point element type used by every tensor and model.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major dense matrix. Vectors are stored as `1 x n` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2::from_vec",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor2::from_rows",
                    format!("row 0 has {cols} columns"),
                    format!("row {i} has {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[T]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.uniform(-bound, bound)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        self.check_same_shape("add_scaled", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-type conversion through `f64`.
    pub fn cast<U: Real>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }
}

/// `x * w + b`, with `b` broadcast over the rows of the product.
pub fn affine<T: Real>(x: &Tensor2<T>, w: &Tensor2<T>, bias: Option<&[T]>) -> Result<Tensor2<T>> {
    if x.cols != w.rows {
        return Err(Error::shape("affine", x.shape_str(), w.shape_str()));
    }
    if let Some(b) = bias {
        if b.len() != w.cols {
            return Err(Error::shape(
                "affine bias",
                w.shape_str(),
                format!("bias of length {}", b.len()),
            ));
        }
    }
    let mut out = Tensor2::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        let o = out.row_mut(r);
        if let Some(b) = bias {
            o.copy_from_slice(b);
        }
        vec_mat_acc(x.row(r), w, o);
    }
    Ok(out)
}

/// `out += x * w` for a row vector `x` (length `w.rows()`).
#[inline]
pub(crate) fn vec_mat_acc<T: Real>(x: &[T], w: &Tensor2<T>, out: &mut [T]) {
    debug_assert_eq!(x.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let wr = w.row(i);
        for (o, &wv) in out.iter_mut().zip(wr) {
            *o += xi * wv;
        }
    }
}

/// `out += d * w^T` for a row vector `d` (length `w.cols()`).
#[inline]
pub(crate) fn vec_mat_t_acc<T: Real>(d: &[T], w: &Tensor2<T>, out: &mut [T]) {
    debug_assert_eq!(d.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    for (o, i) in out.iter_mut().zip(0..w.rows) {
        let wr = w.row(i);
        let mut acc = T::zero();
        for (&wv, &dv) in wr.iter().zip(d) {
            acc += wv * dv;
        }
        *o += acc;
    }
}

/// `g += x^T d`, the outer-product accumulation for a weight gradient.
#[inline]
pub(crate) fn outer_acc<T: Real>(g: &mut Tensor2<T>, x: &[T], d: &[T]) {
    debug_assert_eq!(x.len(), g.rows);
    debug_assert_eq!(d.len(), g.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let gr = g.row_mut(i);
        for (gv, &dv) in gr.iter_mut().zip(d) {
            *gv += xi * dv;
        }
    }
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor2<T>) -> Tensor2<T> {
    x.map(sigmoid_scalar)
}

pub fn tanh_act<T: Real>(x: &Tensor2<T>) -> Tensor2<T> {
    x.map(T::tanh)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::usage("softmax of an empty vector"));
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Real>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = T::one() / total;
    x.iter_mut().for_each(|v| *v *= inv);
}

/// `-ln(pred[target])`, with the probability clamped below at [`LOG_EPSILON`].
pub fn cross_entropy<T: Real>(pred: &[T], target: usize) -> Result<T> {
    let p = pred.get(target).ok_or_else(|| {
        Error::usage(format!(
            "target index {target} out of range for {} classes",
            pred.len()
        ))
    })?;
    Ok(-p.max(T::lit(LOG_EPSILON)).ln())
}

/// A set of trainable tensors visited in a fixed order.
///
/// Gradient containers are values of the same type, so optimizers and the
/// gradient checker can walk parameters and gradients in lockstep.
pub trait ParamSet<T: Real> {
    fn tensors(&self) -> Vec<&Tensor2<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>>;

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn scale_all(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    fn accumulate(&mut self, other: &Self) -> Result<()> {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::shape(
                "ParamSet::accumulate",
                format!("{} tensors", dst.len()),
                format!("{} tensors", src.len()),
            ));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.add_scaled(s, T::one())?;
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

impl<T: Real> ParamSet<T> for Tensor2<T> {
    fn tensors(&self) -> Vec<&Tensor2<T>> {
        vec![self]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        vec![self]
    }
}

impl<T: Real> ParamSet<T> for Vec<Tensor2<T>> {
    fn tensors(&self) -> Vec<&Tensor2<T>> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(x: &Tensor2<f64>, w: &Tensor2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.rows() * w.cols()];
        for i in 0..x.rows() {
            for j in 0..w.cols() {
                for k in 0..x.cols() {
                    out[i * w.cols() + j] += x.get(i, k) * w.get(k, j);
                }
            }
        }
        out
    }

    #[test]
    fn affine_identity_and_bias() {
        let x = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let id = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(affine(&x, &id, None).unwrap().as_slice(), &[1.0, 2.0]);

        let zero = Tensor2::<f64>::zeros(1, 2);
        let w = Tensor2::from_rows(&[vec![5.0, -1.0], vec![2.0, 7.0]]).unwrap();
        assert_eq!(
            affine(&zero, &w, Some(&[3.0, 4.0])).unwrap().as_slice(),
            &[3.0, 4.0]
        );
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let x = Tensor2::<f64>::uniform(3, 4, 1, &mut rng);
        let w = Tensor2::<f64>::uniform(4, 2, 1, &mut rng);
        let got = affine(&x, &w, None).unwrap();
        for (a, b) in got.as_slice().iter().zip(naive_matmul(&x, &w)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let x = Tensor2::<f64>::zeros(1, 3);
        let w = Tensor2::<f64>::zeros(2, 2);
        let err = affine(&x, &w, None).unwrap_err().to_string();
        assert!(err.contains("1x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((sigmoid_scalar(50.0f64) - 1.0).abs() < 1e-15);
        assert!(sigmoid_scalar(-800.0f64) >= 0.0);
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((sigmoid_scalar(1.0f64) - expect).abs() < 1e-15);
        for i in -50..50 {
            let x = i as f64 * 0.37;
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tanh_values() {
        let t = tanh_act(&Tensor2::row_vector(&[0.0f64, 1.0, -1.0]));
        assert_eq!(t.get(0, 0), 0.0);
        assert!((t.get(0, 1) - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert_eq!(t.get(0, 2), -t.get(0, 1));
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let two = softmax(&[2.0f64.ln(), 0.0]).unwrap();
        assert!((two[0] - 2.0 / 3.0).abs() < 1e-15 && (two[1] - 1.0 / 3.0).abs() < 1e-15);
        let big = softmax(&[1000.0f64, 0.0]).unwrap();
        assert_eq!(big[0], 1.0);
        assert!(big[1] >= 0.0 && big[1] < 1e-300);
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let u = vec![0.125f64; 8];
        assert!((cross_entropy(&u, 3).unwrap() - 8.0f64.ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&[0.0f64, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.7f64, 0.3], 1).unwrap() + 0.3f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[1.0f64, 0.0], 1).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(&[1.0f64], 1).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one_and_is_shift_invariant(
                xs in prop::collection::vec(-50.0f64..50.0, 1..20),
                shift in -100.0f64..100.0,
            ) {
                let p = softmax(&xs).unwrap();
                let total: f64 = p.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
                let q = softmax(&shifted).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn activations_are_monotone(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
                prop_assert!(sigmoid_scalar(a) <= sigmoid_scalar(a + d));
                prop_assert!(a.tanh() <= (a + d).tanh());
                prop_assert!(((-a).tanh() + a.tanh()).abs() < 1e-15);
            }
        }
    }
}
