//! Multi-model fusion: per-row feature concatenation (renormalized) for
//! neighbor search, and elementwise averaging of head scores.
//!
//! With unit per-model rows, the cosine between concatenated-renormalized
//! vectors equals the arithmetic mean of the per-model cosines, so the
//! fused ranking is exactly the mean-cosine ranking.

use crate::error::{Error, Result};
use crate::numerics::{l2_norm, DenseMatrix};
use crate::scalar::Real;

/// Allowed deviation of a per-model feature row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ModelOutputs<T> {
    pub model_id: String,
    /// N x D_m, unit-norm rows. D_m may differ between models.
    pub features: DenseMatrix<T>,
    /// N x C, optional; required by [`average_head_scores`].
    pub head_scores: Option<DenseMatrix<T>>,
}

fn check_row_counts<T: Real>(models: &[ModelOutputs<T>]) -> Result<usize> {
    if models.is_empty() {
        return Err(Error::InvalidParams("need at least one model".into()));
    }
    let n = models[0].features.rows();
    for m in models {
        if m.features.rows() != n {
            return Err(Error::RowCountMismatch {
                left: n,
                right: m.features.rows(),
            });
        }
    }
    Ok(n)
}

/// Concatenate per-model unit rows and renormalize each concatenated row.
/// A single model passes through unchanged.
pub fn concat_features<T: Real>(models: &[ModelOutputs<T>]) -> Result<DenseMatrix<T>> {
    let n = check_row_counts(models)?;
    for m in models {
        for (row, r) in m.features.iter_rows().enumerate() {
            let norm = l2_norm(r);
            if (norm - T::one()).abs().as_f64() > UNIT_NORM_TOL {
                return Err(Error::NonNormalizedInput {
                    row,
                    norm: norm.as_f64(),
                });
            }
        }
    }
    if models.len() == 1 {
        return Ok(models[0].features.clone());
    }
    let total_dim: usize = models.iter().map(|m| m.features.cols()).sum();
    let mut out = DenseMatrix::zeros(n, total_dim);
    for i in 0..n {
        let row = out.row_mut(i);
        let mut offset = 0;
        for m in models {
            let block = m.features.row(i);
            row[offset..offset + block.len()].copy_from_slice(block);
            offset += block.len();
        }
        let unit = crate::numerics::l2_normalize(row)?;
        row.copy_from_slice(&unit);
    }
    Ok(out)
}

/// Elementwise mean of every model's head scores.
pub fn average_head_scores<T: Real>(models: &[ModelOutputs<T>]) -> Result<DenseMatrix<T>> {
    let n = check_row_counts(models)?;
    let mut shapes = models.iter().map(|m| {
        m.head_scores
            .as_ref()
            .ok_or_else(|| Error::MissingHeadScores {
                model_id: m.model_id.clone(),
            })
    });
    let first = shapes.next().expect("checked non-empty")?;
    let (rows, cols) = (first.rows(), first.cols());
    if rows != n {
        return Err(Error::RowCountMismatch {
            left: n,
            right: rows,
        });
    }
    let mut sum = DenseMatrix::zeros(rows, cols);
    for m in models {
        let hs = m
            .head_scores
            .as_ref()
            .ok_or_else(|| Error::MissingHeadScores {
                model_id: m.model_id.clone(),
            })?;
        if hs.rows() != rows || hs.cols() != cols {
            return Err(Error::ShapeMismatch {
                left_rows: rows,
                left_cols: cols,
                right_rows: hs.rows(),
                right_cols: hs.cols(),
            });
        }
        for (acc, &x) in sum.data_mut().iter_mut().zip(hs.data()) {
            *acc += x;
        }
    }
    let inv = T::one() / T::of(models.len() as f64);
    for x in sum.data_mut() {
        *x *= inv;
    }
    Ok(sum)
}
