//! Global Average Precision (GAP, also called micro-AP) and top-1 accuracy.
//!
//! GAP ranks all predictions by confidence, then walks the ranking
//! accumulating precision-at-i for every correct hit; one confident wrong
//! answer (for example on a distractor query) pushes every later correct
//! answer down and costs score. Accuracy ignores ranking entirely.

use std::collections::btree_map;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One ranked answer: which class a query was assigned and how confidently.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub query_id: String,
    pub class_id: usize,
    pub confidence: T,
}

/// Query id -> true class; `None` marks a distractor (a query depicting no
/// landmark, which no prediction can get right).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    map: BTreeMap<String, Option<usize>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (String, Option<usize>)>,
    {
        Self {
            map: pairs.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, class: Option<usize>) {
        self.map.insert(query_id.into(), class);
    }

    /// Outer `None`: unknown query id. `Some(None)`: known distractor.
    pub fn get(&self, query_id: &str) -> Option<Option<usize>> {
        self.map.get(query_id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of non-distractor queries (the `M` in the GAP denominator).
    pub fn num_landmarks(&self) -> usize {
        self.map.values().filter(|c| c.is_some()).count()
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, Option<usize>> {
        self.map.iter()
    }
}

/// Validate ids and return predictions sorted by confidence descending,
/// ties by ascending query id.
fn ranked<'a, T: Real>(
    predictions: &'a [Prediction<T>],
    truth: &GroundTruth,
) -> Result<Vec<&'a Prediction<T>>> {
    let mut seen = BTreeSet::new();
    for p in predictions {
        if truth.get(&p.query_id).is_none() {
            return Err(Error::UnknownQueryId(p.query_id.clone()));
        }
        if !seen.insert(p.query_id.as_str()) {
            return Err(Error::DuplicatePrediction(p.query_id.clone()));
        }
    }
    let mut order: Vec<&Prediction<T>> = predictions.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("confidences are finite")
            .then_with(|| a.query_id.cmp(&b.query_id))
    });
    Ok(order)
}

fn is_correct<T: Real>(p: &Prediction<T>, truth: &GroundTruth) -> bool {
    truth.get(&p.query_id) == Some(Some(p.class_id))
}

/// GAP = (1/M) * sum over ranks i of P(i) * rel(i), with P(i) the precision
/// among the first i predictions and M the non-distractor query count.
/// Queries left unpredicted contribute nothing (but still count in M).
pub fn gap<T: Real>(predictions: &[Prediction<T>], truth: &GroundTruth) -> Result<T> {
    let m = truth.num_landmarks();
    if m == 0 {
        return Err(Error::InvalidParams(
            "ground truth contains no landmark queries".into(),
        ));
    }
    let order = ranked(predictions, truth)?;
    let mut correct_so_far = 0usize;
    let mut sum = T::zero();
    for (i, p) in order.iter().enumerate() {
        if is_correct(p, truth) {
            correct_so_far += 1;
            sum += T::of(correct_so_far as f64) / T::of((i + 1) as f64);
        }
    }
    Ok(sum / T::of(m as f64))
}

/// Fraction of non-distractor queries answered with the true class.
pub fn accuracy<T: Real>(predictions: &[Prediction<T>], truth: &GroundTruth) -> Result<T> {
    let m = truth.num_landmarks();
    if m == 0 {
        return Err(Error::InvalidParams(
            "ground truth contains no landmark queries".into(),
        ));
    }
    let order = ranked(predictions, truth)?;
    let correct = order.iter().filter(|p| is_correct(p, truth)).count();
    Ok(T::of(correct as f64) / T::of(m as f64))
}
