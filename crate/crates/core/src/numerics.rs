//! Dense row-major matrices and the numerically careful primitives the rest
//! of the crate builds on: L2 normalization, clamped cosine similarity,
//! max-shifted softmax cross-entropy, and the central finite-difference
//! gradient oracle used by every gradient test.
//!
//! All summations run sequentially over ascending index so results are
//! reproducible across runs and thread counts.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Norms at or below this are treated as zero when normalizing.
pub const NORM_EPS: f64 = 1e-12;

/// Default central-difference step (64-bit).
pub const FD_EPS: f64 = 1e-5;

/// Row-major dense matrix. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParams(format!(
                "matrix data length {} != {} x {}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "matrix entry {x} is not finite"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols)
    }

    /// `self (r x k) * rhs (k x c) -> r x c`, sequential over `k`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in lhs_row.iter().enumerate() {
                let rhs_row = rhs.row(k);
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Returns a copy with every row scaled to unit L2 norm.
    pub fn l2_normalized_rows(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let normalized = l2_normalize(row)?;
            row.copy_from_slice(&normalized);
        }
        Ok(out)
    }

    /// Largest absolute deviation of any row norm from 1.
    pub fn max_row_norm_deviation(&self) -> T {
        self.iter_rows()
            .map(|r| (l2_norm(r) - T::one()).abs())
            .fold(T::zero(), T::max)
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Clamp a cosine into [-1, 1] to absorb rounding before any downstream
/// `acos`/`sqrt(1 - x^2)`.
pub fn clamp_cosine<T: Real>(x: T) -> T {
    x.min(T::one()).max(-T::one())
}

/// Scale `v` to unit L2 norm.
pub fn l2_normalize<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let norm = l2_norm(v);
    if norm.as_f64() <= NORM_EPS {
        return Err(Error::ZeroVector {
            norm: norm.as_f64(),
            eps: NORM_EPS,
        });
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
///
/// The product terms commute and the summation order is fixed, so the result
/// is bitwise symmetric in its arguments.
pub fn cosine_sim<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(clamp_cosine(dot(a, b)))
}

/// Softmax cross-entropy via max-shifted log-sum-exp.
///
/// Returns `(loss, grad)` with `grad = softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    let mut grad: Vec<T> = Vec::with_capacity(logits.len());
    for &l in logits {
        let e = (l - max).exp();
        sum += e;
        grad.push(e);
    }
    let lse = sum.ln() + max;
    let loss = lse - logits[target];
    for (c, g) in grad.iter_mut().enumerate() {
        *g /= sum;
        if c == target {
            *g -= T::one();
        }
    }
    Ok((loss, grad))
}

/// Central-difference gradient of a scalar function:
/// component i is `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad<T: Real, F: Fn(&[T]) -> T>(f: F, x: &[T], eps: T) -> Vec<T> {
    debug_assert!(eps > T::zero());
    let mut point = x.to_vec();
    let two_eps = eps + eps;
    (0..x.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + eps;
            let plus = f(&point);
            point[i] = orig - eps;
            let minus = f(&point);
            point[i] = orig;
            (plus - minus) / two_eps
        })
        .collect()
}

/// Normwise relative error `|a - b|_2 / max(|a|_2, |b|_2, floor)`.
///
/// Elementwise relative error is ill-conditioned where a true gradient
/// component happens to sit near zero; the normwise form is the standard
/// gradient-check metric.
pub fn relative_error<T: Real>(a: &[T], b: &[T], floor: T) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut diff = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn normalize_345_triangle() {
        let out = l2_normalize(&[3.0_f64, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_zero_vector_errors() {
        let err = l2_normalize(&[0.0_f64, 0.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroVector { .. }));
    }

    #[test]
    fn normalize_random_dim64_is_unit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = l2_normalize(&v).unwrap();
        assert!((l2_norm(&out) - 1.0).abs() < 1e-7);
        // parallel to v: cosine with the input direction is 1
        let unit_v = l2_normalize(&v).unwrap();
        assert!((dot(&out, &unit_v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_identity_orthogonal_antipodal() {
        let u = l2_normalize(&[0.3_f64, -1.2, 0.5]).unwrap();
        assert_eq!(cosine_sim(&u, &u).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0_f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert_eq!(cosine_sim(&u, &neg).unwrap(), -1.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let err = cosine_sim(&[1.0_f64, 0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, _) = softmax_cross_entropy(&[0.5_f64; 5], 2).unwrap();
        assert!((loss - 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let err = softmax_cross_entropy(&[0.0_f64; 3], 3).unwrap_err();
        assert!(matches!(err, Error::TargetOutOfRange { .. }));
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for target in 0..10 {
            let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (_, grad) = softmax_cross_entropy(&logits, target).unwrap();
            let fd = finite_diff_grad(
                |l| softmax_cross_entropy(l, target).unwrap().0,
                &logits,
                FD_EPS,
            );
            assert!(relative_error(&grad, &fd, 1e-8) < 1e-6);
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let grad = finite_diff_grad(|x| dot(x, x), &[1.0_f64, 2.0], 1e-5);
        assert!((grad[0] - 2.0).abs() < 1e-8);
        assert!((grad[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_on_constant_is_zero() {
        let grad = finite_diff_grad(|_| 42.0_f64, &[1.0, -1.0, 0.5], 1e-5);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn matrix_shape_is_validated() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0_f64; 3]).is_err());
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0_f64, 2.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = DenseMatrix::from_vec(2, 3, vec![1.0_f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::from_vec(3, 2, vec![7.0_f64, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        assert!(a.matmul(&a).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-100.0_f64..100.0, 1..32)) {
            prop_assume!(l2_norm(&v) > 1e-6);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_is_bitwise_symmetric(
            a in proptest::collection::vec(-10.0_f64..10.0, 8),
            b in proptest::collection::vec(-10.0_f64..10.0, 8),
        ) {
            prop_assume!(l2_norm(&a) > 1e-6 && l2_norm(&b) > 1e-6);
            let ua = l2_normalize(&a).unwrap();
            let ub = l2_normalize(&b).unwrap();
            let ab = cosine_sim(&ua, &ub).unwrap();
            let ba = cosine_sim(&ub, &ua).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn softmax_grad_sums_to_zero(
            logits in proptest::collection::vec(-10.0_f64..10.0, 2..16),
            target_raw in 0usize..16,
        ) {
            let target = target_raw % logits.len();
            let (loss, grad) = softmax_cross_entropy(&logits, target).unwrap();
            prop_assert!(loss >= 0.0);
            let sum: f64 = grad.iter().sum();
            prop_assert!(sum.abs() <= 1e-12);
        }

        #[test]
        fn loss_decreases_when_target_logit_increases(
            logits in proptest::collection::vec(-5.0_f64..5.0, 3..8),
            target_raw in 0usize..8,
            bump in 0.01_f64..2.0,
        ) {
            let target = target_raw % logits.len();
            let (before, _) = softmax_cross_entropy(&logits, target).unwrap();
            let mut bumped = logits.clone();
            bumped[target] += bump;
            let (after, _) = softmax_cross_entropy(&bumped, target).unwrap();
            prop_assert!(after < before);
        }
    }
}
