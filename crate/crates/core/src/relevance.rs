//! Similarity and relevance scoring.
//!
//! Relevance of a candidate is its maximum cosine similarity to any target
//! row. With several views, per-view relevances are combined by a weighted
//! sum (late fusion); with several target datasets, fused per-dataset
//! relevances are combined by max or mean. Rows are assumed unit-normalized
//! (or zero), so cosine is a clamped dot product.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{clamp_cosine, dot, max_cosine_into};
use crate::store::{Matrix, TargetSet, ViewSet};

/// Candidate rows per parallel work item.
const BLOCK_ROWS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum RelevanceError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no target rows")]
    EmptyTargets,
    #[error("target set has no datasets")]
    EmptyTargetSet,
    #[error("view {0:?} missing")]
    MissingView(String),
    #[error("diversity penalty needs a nonempty selection")]
    EmptySelection,
    #[error("fusion weights must be finite and nonnegative with at least one positive: {0}")]
    InvalidWeights(String),
}

pub type Result<T> = std::result::Result<T, RelevanceError>;

/// Per-view fusion weights, normalized to sum to one. Views with weight zero
/// are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights(BTreeMap<String, f64>);

impl FusionWeights {
    pub fn new<I, S>(raw: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let raw: Vec<(String, f64)> = raw.into_iter().map(|(k, w)| (k.into(), w)).collect();
        if let Some((k, w)) = raw.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(RelevanceError::InvalidWeights(format!("{k}={w}")));
        }
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(RelevanceError::InvalidWeights(
                "all weights are zero".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for (k, w) in raw {
            if w > 0.0 {
                *map.entry(k).or_insert(0.0) += w / total;
            }
        }
        Ok(Self(map))
    }

    /// `1/K` for each named view.
    pub fn uniform<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(names.into_iter().map(|n| (n, 1.0)))
    }

    pub fn single(name: impl Into<String>) -> Self {
        Self::new([(name.into(), 1.0)]).expect("one positive weight")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.0.iter().map(|(k, &w)| (k.as_str(), w))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + Clone + '_ {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    /// Weighted sum of per-view values given in [`Self::iter`] order.
    #[inline]
    pub fn combine(&self, per_view: impl IntoIterator<Item = f64>) -> f64 {
        let mut terms = self.0.values().zip(per_view).map(|(w, v)| w * v);
        let first = terms.next().unwrap_or(0.0);
        terms.fold(first, |acc, t| acc + t)
    }
}

impl FromStr for FusionWeights {
    type Err = RelevanceError;

    /// Parses `name=w,name=w`.
    fn from_str(s: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| RelevanceError::InvalidWeights(part.to_owned()))?;
            let w: f64 = v
                .trim()
                .parse()
                .map_err(|_| RelevanceError::InvalidWeights(part.to_owned()))?;
            raw.push((k.trim().to_owned(), w));
        }
        Self::new(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    #[default]
    Max,
    Mean,
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown aggregation {other:?} (expected max|mean)")),
        }
    }
}

/// One relevance score per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector(pub Vec<f64>);

impl RelevanceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine of two unit-or-zero vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RelevanceError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(clamp_cosine(dot(a, b)))
}

/// Raw per-candidate max dot product against the target rows, computed in
/// candidate blocks in parallel.
pub(crate) fn max_dot(candidates: &Matrix, targets: &Matrix) -> Vec<f32> {
    let dims = candidates.cols();
    let mut out = vec![f32::NEG_INFINITY; candidates.rows()];
    if dims == 0 {
        out.fill(0.0);
        return out;
    }
    out.par_chunks_mut(BLOCK_ROWS)
        .zip(candidates.as_slice().par_chunks(BLOCK_ROWS * dims))
        .for_each(|(dst, rows)| max_cosine_into(rows, targets.as_slice(), dims, dst));
    out
}

/// Max cosine of each candidate row to any target row.
pub fn relevance_single(candidates: &Matrix, targets: &Matrix) -> Result<RelevanceVector> {
    if targets.rows() == 0 {
        return Err(RelevanceError::EmptyTargets);
    }
    if candidates.cols() != targets.cols() {
        return Err(RelevanceError::DimensionMismatch(
            candidates.cols(),
            targets.cols(),
        ));
    }
    Ok(RelevanceVector(
        max_dot(candidates, targets)
            .into_iter()
            .map(clamp_cosine)
            .collect(),
    ))
}

/// Weighted sum over views of per-view [`relevance_single`].
pub fn relevance_fused(
    views: &ViewSet,
    targets: &BTreeMap<String, Matrix>,
    weights: &FusionWeights,
) -> Result<RelevanceVector> {
    let mut per_view = Vec::with_capacity(weights.len());
    for (name, _) in weights.iter() {
        let view = views
            .get(name)
            .ok_or_else(|| RelevanceError::MissingView(name.to_owned()))?;
        let t = targets
            .get(name)
            .ok_or_else(|| RelevanceError::MissingView(name.to_owned()))?;
        per_view.push(relevance_single(&view.matrix, t)?.0);
    }
    let n = per_view.first().map_or(0, Vec::len);
    Ok(RelevanceVector(
        (0..n)
            .map(|i| weights.combine(per_view.iter().map(|v| v[i])))
            .collect(),
    ))
}

/// Fused relevance per target dataset, aggregated across datasets.
pub fn relevance_multi_dataset(
    views: &ViewSet,
    targets: &TargetSet,
    weights: &FusionWeights,
    mode: AggregationMode,
) -> Result<RelevanceVector> {
    if targets.datasets.is_empty() {
        return Err(RelevanceError::EmptyTargetSet);
    }
    let per_dataset = targets
        .datasets
        .iter()
        .map(|ds| relevance_fused(views, &ds.views, weights))
        .collect::<Result<Vec<_>>>()?;
    let n = per_dataset[0].len();
    let m = per_dataset.len() as f64;
    let scores = (0..n)
        .map(|i| match mode {
            AggregationMode::Max => per_dataset
                .iter()
                .map(|r| r.0[i])
                .fold(f64::NEG_INFINITY, f64::max),
            AggregationMode::Mean => per_dataset.iter().map(|r| r.0[i]).sum::<f64>() / m,
        })
        .collect();
    Ok(RelevanceVector(scores))
}

/// Weighted sum over views of the max cosine between candidate `i` and any
/// selected row.
pub fn diversity_penalty(
    i: usize,
    selected: &[usize],
    views: &ViewSet,
    weights: &FusionWeights,
) -> Result<f64> {
    if selected.is_empty() {
        return Err(RelevanceError::EmptySelection);
    }
    let mut per_view = Vec::with_capacity(weights.len());
    for (name, _) in weights.iter() {
        let view = views
            .get(name)
            .ok_or_else(|| RelevanceError::MissingView(name.to_owned()))?;
        let x = view.row(i);
        let best = selected
            .iter()
            .map(|&s| dot(x, view.row(s)))
            .fold(f32::NEG_INFINITY, f32::max);
        per_view.push(clamp_cosine(best));
    }
    Ok(weights.combine(per_view))
}
