//! Two-step score refinement on top of raw nearest-neighbor retrieval.
//!
//! Step 1 replaces the single top-1 cosine with a per-class sum of
//! high-powered neighbor cosines: `score(c) = sum max(0, cos)^p1` over the
//! top-k neighbors of class `c`. Step 2 adds the classifier head's opinion,
//! `max(0, head_cos)^p2`, for every candidate class. Negative cosines are
//! clamped to zero before powering so dissimilarity never turns into
//! positive evidence under an even power.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::numerics::DenseMatrix;
use crate::retrieval::{Gallery, Neighbor};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig<T> {
    /// Neighbors retrieved per query before class aggregation.
    pub neighbor_k: usize,
    /// Power applied to neighbor cosines (step 1).
    pub p1: T,
    /// Power applied to head cosines (step 2).
    pub p2: T,
    /// How many top head classes join the candidate set in step 2; 0 keeps
    /// the fusion neighbors-only.
    pub head_candidates: usize,
}

impl<T: Real> Default for PostprocessConfig<T> {
    fn default() -> Self {
        Self {
            neighbor_k: 5,
            p1: T::of(8.0),
            p2: T::of(12.0),
            head_candidates: 5,
        }
    }
}

impl<T: Real> PostprocessConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.neighbor_k == 0 {
            return Err(Error::InvalidParams("neighbor_k must be >= 1".into()));
        }
        if self.p1 < T::one() || self.p2 < T::one() {
            return Err(Error::InvalidParams(format!(
                "powers must be >= 1 (p1 = {}, p2 = {})",
                self.p1, self.p2
            )));
        }
        Ok(())
    }
}

/// Accumulated evidence for one class, with provenance flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEntry<T> {
    pub score: T,
    pub from_neighbors: bool,
    pub from_head: bool,
}

/// Class -> accumulated score, ordered by class index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassScoreTable<T> {
    entries: BTreeMap<usize, ScoreEntry<T>>,
}

impl<T: Real> ClassScoreTable<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn score(&self, class_id: usize) -> Option<T> {
        self.entries.get(&class_id).map(|e| e.score)
    }

    pub fn entry(&self, class_id: usize) -> Option<&ScoreEntry<T>> {
        self.entries.get(&class_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ScoreEntry<T>)> {
        self.entries.iter().map(|(&c, e)| (c, e))
    }

    /// Highest-scoring class; ties go to the smallest class index (the map
    /// iterates ascending, and only a strictly greater score replaces).
    pub fn best(&self) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        for (&class_id, entry) in &self.entries {
            match best {
                Some((_, s)) if entry.score <= s => {}
                _ => best = Some((class_id, entry.score)),
            }
        }
        best
    }
}

/// Step 1: per-class sum of clamped, powered neighbor cosines.
pub fn combine_neighbors<T: Real>(neighbors: &[Neighbor<T>], p1: T) -> Result<ClassScoreTable<T>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    let mut entries: BTreeMap<usize, ScoreEntry<T>> = BTreeMap::new();
    for n in neighbors {
        let term = n.cosine.max(T::zero()).powf(p1);
        let e = entries.entry(n.class_id).or_insert(ScoreEntry {
            score: T::zero(),
            from_neighbors: true,
            from_head: false,
        });
        e.score += term;
    }
    Ok(ClassScoreTable { entries })
}

/// Step 2: add `max(0, head_cos)^p2` for every candidate class. Candidates
/// are the classes already in the table plus the `head_candidates` classes
/// with the highest head scores (ties by ascending class index).
pub fn fuse_head_scores<T: Real>(
    mut table: ClassScoreTable<T>,
    head_scores: &[T],
    p2: T,
    head_candidates: usize,
) -> Result<ClassScoreTable<T>> {
    if let Some((&class_id, _)) = table.entries.iter().next_back() {
        if class_id >= head_scores.len() {
            return Err(Error::DimensionMismatch {
                expected: head_scores.len(),
                got: class_id + 1,
            });
        }
    }
    let mut candidates: Vec<usize> = table.entries.keys().copied().collect();
    if head_candidates > 0 {
        let mut ranked: Vec<usize> = (0..head_scores.len()).collect();
        ranked.sort_unstable_by(|&a, &b| {
            head_scores[b]
                .partial_cmp(&head_scores[a])
                .expect("head scores are finite")
                .then(a.cmp(&b))
        });
        for &c in ranked.iter().take(head_candidates) {
            if !table.entries.contains_key(&c) {
                candidates.push(c);
            }
        }
    }
    for class_id in candidates {
        let term = head_scores[class_id].max(T::zero()).powf(p2);
        match table.entries.entry(class_id) {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let e = o.get_mut();
                e.score += term;
                e.from_head = e.from_head || term > T::zero();
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                if term > T::zero() {
                    v.insert(ScoreEntry {
                        score: term,
                        from_neighbors: false,
                        from_head: true,
                    });
                }
            }
        }
    }
    Ok(table)
}

/// Full refined prediction for one query: retrieve `neighbor_k` neighbors,
/// aggregate per class, optionally fuse head scores, take the argmax.
pub fn predict_with_postprocessing<T: Real>(
    gallery: &Gallery<T>,
    head_scores: Option<&[T]>,
    query_id: &str,
    query: &[T],
    cfg: &PostprocessConfig<T>,
) -> Result<Prediction<T>> {
    cfg.validate()?;
    let neighbors = gallery.top_k(query, cfg.neighbor_k)?;
    let mut table = combine_neighbors(&neighbors, cfg.p1)?;
    if let Some(scores) = head_scores {
        table = fuse_head_scores(table, scores, cfg.p2, cfg.head_candidates)?;
    }
    let (class_id, confidence) = table.best().expect("table built from >= 1 neighbor");
    Ok(Prediction {
        query_id: query_id.to_string(),
        class_id,
        confidence,
    })
}

/// [`predict_with_postprocessing`] over all query rows in parallel; output
/// order matches input order. `head_scores` rows align with query rows.
pub fn predict_batch<T: Real>(
    gallery: &Gallery<T>,
    head_scores: Option<&DenseMatrix<T>>,
    query_ids: &[String],
    queries: &DenseMatrix<T>,
    cfg: &PostprocessConfig<T>,
) -> Result<Vec<Prediction<T>>> {
    if query_ids.len() != queries.rows() {
        return Err(Error::RowCountMismatch {
            left: queries.rows(),
            right: query_ids.len(),
        });
    }
    if let Some(hs) = head_scores {
        if hs.rows() != queries.rows() {
            return Err(Error::RowCountMismatch {
                left: queries.rows(),
                right: hs.rows(),
            });
        }
    }
    (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            predict_with_postprocessing(
                gallery,
                head_scores.map(|hs| hs.row(i)),
                &query_ids[i],
                queries.row(i),
                cfg,
            )
        })
        .collect()
}
