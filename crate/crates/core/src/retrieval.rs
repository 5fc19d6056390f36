//! Gallery storage and exact brute-force cosine retrieval.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::numerics::{dot, DenseMatrix};
use crate::scalar::Real;

/// Allowed deviation of a gallery row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Labeled unit-norm feature rows to search against.
#[derive(Debug, Clone)]
pub struct Gallery<T> {
    features: DenseMatrix<T>,
    labels: Vec<usize>,
    ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<T> {
    pub row_index: usize,
    pub cosine: T,
    pub class_id: usize,
}

impl<T: Real> Gallery<T> {
    pub fn new(features: DenseMatrix<T>, labels: Vec<usize>, ids: Vec<String>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyGallery);
        }
        if labels.len() != features.rows() {
            return Err(Error::RowCountMismatch {
                left: features.rows(),
                right: labels.len(),
            });
        }
        if ids.len() != features.rows() {
            return Err(Error::RowCountMismatch {
                left: features.rows(),
                right: ids.len(),
            });
        }
        for (row, r) in features.iter_rows().enumerate() {
            let norm = crate::numerics::l2_norm(r);
            if (norm - T::one()).abs().as_f64() > UNIT_NORM_TOL {
                return Err(Error::NonNormalizedInput {
                    row,
                    norm: norm.as_f64(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty galleries
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMatrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Exact top-k by cosine, descending; ties broken by ascending row
    /// index so results are deterministic.
    pub fn top_k(&self, query: &[T], k: usize) -> Result<Vec<Neighbor<T>>> {
        if k == 0 {
            return Err(Error::InvalidParams("top_k requires k >= 1".into()));
        }
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        let mut scored: Vec<(T, usize)> = self
            .features
            .iter_rows()
            .enumerate()
            .map(|(i, row)| (crate::numerics::clamp_cosine(dot(query, row)), i))
            .collect();
        let keep = k.min(scored.len());
        let order = |a: &(T, usize), b: &(T, usize)| {
            b.0.partial_cmp(&a.0)
                .expect("cosines are finite")
                .then(a.1.cmp(&b.1))
        };
        if keep < scored.len() {
            scored.select_nth_unstable_by(keep, order);
            scored.truncate(keep);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(cosine, row_index)| Neighbor {
                row_index,
                cosine,
                class_id: self.labels[row_index],
            })
            .collect())
    }

    /// Nearest-neighbor prediction: top-1 class with its cosine as the
    /// confidence.
    pub fn baseline_predict(&self, query_id: &str, query: &[T]) -> Result<Prediction<T>> {
        let top = self.top_k(query, 1)?;
        let best = &top[0];
        Ok(Prediction {
            query_id: query_id.to_string(),
            class_id: best.class_id,
            confidence: best.cosine,
        })
    }
}

/// [`Gallery::baseline_predict`] over all query rows in parallel; output
/// order matches input order.
pub fn baseline_predict_batch<T: Real>(
    gallery: &Gallery<T>,
    query_ids: &[String],
    queries: &DenseMatrix<T>,
) -> Result<Vec<Prediction<T>>> {
    if query_ids.len() != queries.rows() {
        return Err(Error::RowCountMismatch {
            left: queries.rows(),
            right: query_ids.len(),
        });
    }
    (0..queries.rows())
        .into_par_iter()
        .map(|i| gallery.baseline_predict(&query_ids[i], queries.row(i)))
        .collect()
}
