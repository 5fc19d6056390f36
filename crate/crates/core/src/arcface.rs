//! Sub-center angular-margin classification head.
//!
//! Each class owns `K` unit-norm weight vectors (sub-centers); the class
//! cosine is the max over its sub-centers. During training the target
//! class's angle is widened by that class's margin before scaling:
//! `s * cos(theta_y + m)` while `theta_y + m <= pi`, and the monotone
//! fallback `s * (cos(theta_y) - m * sin(m))` past that point. At inference
//! the head emits plain class cosines (no margin, no scale).

use crate::error::{Error, Result};
use crate::numerics::{clamp_cosine, dot, softmax_cross_entropy, DenseMatrix};
use crate::scalar::Real;

/// Allowed deviation of a stored sub-center norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ArcFaceHead<T> {
    num_classes: usize,
    num_subcenters: usize,
    embed_dim: usize,
    /// `(C * K) x D`; row `c * K + k` is sub-center `k` of class `c`.
    weights: DenseMatrix<T>,
    margins: Vec<T>,
    scale: T,
}

/// Per-class max cosine plus the sub-center that attained it (needed to
/// route gradients through the max).
#[derive(Debug, Clone)]
pub struct ClassCosines<T> {
    pub values: Vec<T>,
    pub subcenter: Vec<usize>,
}

/// Batch loss and gradients. `grad_weights` rows follow the head's
/// `(C * K) x D` layout; only argmax sub-centers receive gradient.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad_embeddings: DenseMatrix<T>,
    pub grad_weights: DenseMatrix<T>,
}

impl<T: Real> ArcFaceHead<T> {
    pub fn new(
        num_classes: usize,
        num_subcenters: usize,
        embed_dim: usize,
        weights: DenseMatrix<T>,
        margins: Vec<T>,
        scale: T,
    ) -> Result<Self> {
        if num_classes == 0 || num_subcenters == 0 || embed_dim == 0 {
            return Err(Error::InvalidParams(format!(
                "head dimensions must be positive (C={num_classes}, K={num_subcenters}, D={embed_dim})"
            )));
        }
        if weights.rows() != num_classes * num_subcenters || weights.cols() != embed_dim {
            return Err(Error::ShapeMismatch {
                left_rows: weights.rows(),
                left_cols: weights.cols(),
                right_rows: num_classes * num_subcenters,
                right_cols: embed_dim,
            });
        }
        if margins.len() != num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                got: margins.len(),
            });
        }
        let half_pi = T::of(std::f64::consts::FRAC_PI_2);
        if let Some(m) = margins.iter().find(|m| **m < T::zero() || **m >= half_pi) {
            return Err(Error::InvalidParams(format!(
                "margin {m} outside [0, pi/2)"
            )));
        }
        if scale <= T::zero() {
            return Err(Error::InvalidParams(format!(
                "scale must be positive, got {scale}"
            )));
        }
        for (row, w) in weights.iter_rows().enumerate() {
            let norm = crate::numerics::l2_norm(w);
            if (norm - T::one()).abs().as_f64() > UNIT_NORM_TOL {
                return Err(Error::NonNormalizedInput {
                    row,
                    norm: norm.as_f64(),
                });
            }
        }
        Ok(Self {
            num_classes,
            num_subcenters,
            embed_dim,
            weights,
            margins,
            scale,
        })
    }

    /// Gaussian-initialized head with unit-norm sub-centers.
    pub fn random<R: rand::Rng>(
        num_classes: usize,
        num_subcenters: usize,
        embed_dim: usize,
        margins: Vec<T>,
        scale: T,
        rng: &mut R,
    ) -> Result<Self> {
        let mut weights = DenseMatrix::zeros(num_classes * num_subcenters, embed_dim);
        for i in 0..weights.rows() {
            let row: Vec<T> = (0..embed_dim)
                .map(|_| T::of(rng.sample::<f64, _>(rand_distr::StandardNormal)))
                .collect();
            let unit = crate::numerics::l2_normalize(&row)?;
            weights.row_mut(i).copy_from_slice(&unit);
        }
        Self::new(
            num_classes,
            num_subcenters,
            embed_dim,
            weights,
            margins,
            scale,
        )
    }

    /// Skips the unit-norm validation; used by the finite-difference checker
    /// to evaluate the loss at perturbed (slightly off-unit) weights.
    pub(crate) fn from_parts_unchecked(
        num_classes: usize,
        num_subcenters: usize,
        embed_dim: usize,
        weights: DenseMatrix<T>,
        margins: Vec<T>,
        scale: T,
    ) -> Self {
        Self {
            num_classes,
            num_subcenters,
            embed_dim,
            weights,
            margins,
            scale,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_subcenters(&self) -> usize {
        self.num_subcenters
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn weights(&self) -> &DenseMatrix<T> {
        &self.weights
    }

    /// Mutable weight access for optimizer steps. Callers must restore unit
    /// norms afterwards (see [`renormalize_weights`](Self::renormalize_weights)).
    pub fn weights_mut(&mut self) -> &mut DenseMatrix<T> {
        &mut self.weights
    }

    pub fn margins(&self) -> &[T] {
        &self.margins
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Rescale every sub-center back to unit norm (after an optimizer step).
    pub fn renormalize_weights(&mut self) -> Result<()> {
        self.weights = self.weights.l2_normalized_rows()?;
        Ok(())
    }

    /// Max-over-sub-centers cosine per class, with the attaining sub-center
    /// index. Ties route to the lowest index.
    pub fn class_cosines(&self, embedding: &[T]) -> Result<ClassCosines<T>> {
        if embedding.len() != self.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim,
                got: embedding.len(),
            });
        }
        let mut values = Vec::with_capacity(self.num_classes);
        let mut subcenter = Vec::with_capacity(self.num_classes);
        for c in 0..self.num_classes {
            let mut best = T::neg_infinity();
            let mut best_k = 0;
            for k in 0..self.num_subcenters {
                let cos = dot(embedding, self.weights.row(c * self.num_subcenters + k));
                if cos > best {
                    best = cos;
                    best_k = k;
                }
            }
            values.push(clamp_cosine(best));
            subcenter.push(best_k);
        }
        Ok(ClassCosines { values, subcenter })
    }

    /// Inference-time per-class scores: the raw class cosines. Margins and
    /// scale are training-only.
    pub fn head_scores(&self, embedding: &[T]) -> Result<Vec<T>> {
        Ok(self.class_cosines(embedding)?.values)
    }

    /// Row-wise [`head_scores`](Self::head_scores) over a batch.
    pub fn head_scores_batch(&self, embeddings: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut out = DenseMatrix::zeros(embeddings.rows(), self.num_classes);
        for i in 0..embeddings.rows() {
            let scores = self.head_scores(embeddings.row(i))?;
            out.row_mut(i).copy_from_slice(&scores);
        }
        Ok(out)
    }

    /// Scaled training logits with the target class's margin applied.
    pub fn forward_logits(&self, embedding: &[T], target: usize) -> Result<Vec<T>> {
        if target >= self.num_classes {
            return Err(Error::TargetOutOfRange {
                target,
                classes: self.num_classes,
            });
        }
        let cosines = self.class_cosines(embedding)?;
        Ok(self.scaled_logits(&cosines.values, target))
    }

    fn scaled_logits(&self, cosines: &[T], target: usize) -> Vec<T> {
        cosines
            .iter()
            .enumerate()
            .map(|(c, &cos)| {
                if c == target {
                    self.scale * margin_term(cos, self.margins[c]).0
                } else {
                    self.scale * cos
                }
            })
            .collect()
    }

    /// Mean softmax cross-entropy over the batch plus analytic gradients
    /// w.r.t. the (unnormalized) embeddings and sub-center weights.
    pub fn loss_and_grad(
        &self,
        embeddings: &DenseMatrix<T>,
        targets: &[usize],
    ) -> Result<LossGrad<T>> {
        let batch = embeddings.rows();
        if batch == 0 {
            return Err(Error::InvalidParams("empty batch".into()));
        }
        if embeddings.cols() != self.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim,
                got: embeddings.cols(),
            });
        }
        if targets.len() != batch {
            return Err(Error::DimensionMismatch {
                expected: batch,
                got: targets.len(),
            });
        }
        let inv_batch = T::one() / T::of(batch as f64);
        let mut loss = T::zero();
        let mut grad_embeddings = DenseMatrix::zeros(batch, self.embed_dim);
        let mut grad_weights = DenseMatrix::zeros(self.weights.rows(), self.embed_dim);
        for (i, &target) in targets.iter().enumerate() {
            let embedding = embeddings.row(i);
            if target >= self.num_classes {
                return Err(Error::TargetOutOfRange {
                    target,
                    classes: self.num_classes,
                });
            }
            let cosines = self.class_cosines(embedding)?;
            let logits = self.scaled_logits(&cosines.values, target);
            let (sample_loss, dlogits) = softmax_cross_entropy(&logits, target)?;
            loss += sample_loss * inv_batch;
            for (c, &dlogit) in dlogits.iter().enumerate() {
                let dlogit_dcos = if c == target {
                    self.scale * margin_term(cosines.values[c], self.margins[c]).1
                } else {
                    self.scale
                };
                let coef = dlogit * inv_batch * dlogit_dcos;
                let w_row = c * self.num_subcenters + cosines.subcenter[c];
                let weight = self.weights.row(w_row);
                let ge = grad_embeddings.row_mut(i);
                for d in 0..self.embed_dim {
                    ge[d] += coef * weight[d];
                }
                let gw = grad_weights.row_mut(w_row);
                for d in 0..self.embed_dim {
                    gw[d] += coef * embedding[d];
                }
            }
        }
        Ok(LossGrad {
            loss,
            grad_embeddings,
            grad_weights,
        })
    }
}

/// Margined target term and its derivative in `cos(theta)`:
/// `(cos(theta + m), d/dcos)` in the main region, or the monotone fallback
/// `(cos(theta) - m sin(m), 1)` once `theta + m` would pass `pi`.
///
/// `sin(theta)` is recovered as `sqrt(max(0, 1 - cos^2))`; the derivative
/// accounts for that dependence. At the `theta = 0` endpoint the true
/// derivative is unbounded; the singular term is dropped there to keep
/// optimizer steps finite.
fn margin_term<T: Real>(cos_y: T, margin: T) -> (T, T) {
    let (sin_m, cos_m) = margin.sin_cos();
    if cos_y > -cos_m {
        let sin_sq = (T::one() - cos_y * cos_y).max(T::zero());
        let sin_y = sin_sq.sqrt();
        let value = cos_y * cos_m - sin_y * sin_m;
        let deriv = if sin_y > T::zero() {
            cos_m + sin_m * cos_y / sin_y
        } else {
            cos_m
        };
        (value, deriv)
    } else {
        (cos_y - margin * sin_m, T::one())
    }
}
