use rayon::prelude::*;

use super::{
    duration_budget, prefilter_size, Method, PickLog, Result, SelectionConfig, SelectionError,
    SelectionResult,
};
use crate::kernels::{argmax, clamp_cosine, max_cosine_into, rank_order};
use crate::relevance::{relevance_multi_dataset, FusionWeights, RelevanceError, RelevanceVector};
use crate::store::{CorpusManifest, Matrix, TargetSet, ViewSet};

const BLOCK_ROWS: usize = 256;

#[inline]
fn mmr_score(lambda: f64, relevance: f64, diversity: f64) -> f64 {
    lambda * relevance - (1.0 - lambda) * diversity
}

/// Weighted views in weight order, checked against the candidate count.
fn weighted_views<'a>(
    views: &'a ViewSet,
    weights: &FusionWeights,
    n: usize,
) -> Result<Vec<&'a Matrix>> {
    weights
        .names()
        .map(|name| {
            let v = views
                .get(name)
                .ok_or_else(|| RelevanceError::MissingView(name.to_owned()))?;
            if v.rows() != n {
                return Err(SelectionError::LengthMismatch(v.rows(), n));
            }
            Ok(&v.matrix)
        })
        .collect()
}

/// Per-view running max similarity of candidate rows to the selected set.
struct Diversity {
    /// One vector per weighted view, aligned with the candidate rows.
    running: Vec<Vec<f32>>,
}

impl Diversity {
    fn new(views: usize, n: usize) -> Self {
        Self {
            running: vec![vec![f32::NEG_INFINITY; n]; views],
        }
    }

    /// Folds the similarities to `new_rows[k]` (one matrix per view) into the
    /// running maxima of `candidates[k]`.
    fn absorb(&mut self, candidates: &[Matrix], new_rows: &[Matrix]) {
        for ((run, cand), new) in self.running.iter_mut().zip(candidates).zip(new_rows) {
            let dims = cand.cols();
            if dims == 0 {
                continue;
            }
            run.par_chunks_mut(BLOCK_ROWS)
                .zip(cand.as_slice().par_chunks(BLOCK_ROWS * dims))
                .for_each(|(dst, rows)| max_cosine_into(rows, new.as_slice(), dims, dst));
        }
    }

    #[inline]
    fn penalty(&self, weights: &FusionWeights, i: usize) -> f64 {
        weights.combine(self.running.iter().map(|r| clamp_cosine(r[i])))
    }

    fn retain(&mut self, keep: &[bool]) {
        for run in &mut self.running {
            let mut it = keep.iter();
            run.retain(|_| *it.next().unwrap());
        }
    }
}

fn single_rows(views: &[&Matrix], i: usize) -> Vec<Matrix> {
    views.iter().map(|m| m.gather(&[i])).collect()
}

fn check_inputs(relevance: &RelevanceVector, durations: &[f64]) -> Result<usize> {
    let n = relevance.len();
    if n == 0 {
        return Err(SelectionError::EmptyCorpus);
    }
    if durations.len() != n {
        return Err(SelectionError::LengthMismatch(durations.len(), n));
    }
    Ok(n)
}

/// Exact greedy MMR over all candidates, one pick at a time, until the
/// duration budget is reached. The first pick is the most relevant
/// candidate; each later pick maximizes `lambda * r - (1 - lambda) * v`.
/// Ties go to the lowest index.
pub fn greedy_mmr_exact(
    relevance: &RelevanceVector,
    views: &ViewSet,
    durations: &[f64],
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let n = check_inputs(relevance, durations)?;
    let r = relevance.as_slice();
    let mats = weighted_views(views, &cfg.weights, n)?;
    let full: Vec<Matrix> = mats.iter().map(|m| (*m).clone()).collect();
    let budget = duration_budget(durations, cfg.subset_fraction);
    let lambda = cfg.lambda;

    let mut log = PickLog::new(durations);
    let mut taken = vec![false; n];
    let mut div = Diversity::new(mats.len(), n);

    let first = argmax(r).expect("nonempty");
    log.push(first, r[first], 0.0, mmr_score(lambda, r[first], 0.0));
    taken[first] = true;
    div.absorb(&full, &single_rows(&mats, first));

    let mut exhausted = false;
    while log.total < budget {
        let mut best: Option<(f64, usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let v = div.penalty(&cfg.weights, i);
            let m = mmr_score(lambda, r[i], v);
            if best.is_none_or(|(bm, _, _)| m > bm) {
                best = Some((m, i, v));
            }
        }
        let Some((m, i, v)) = best else {
            exhausted = true;
            break;
        };
        log.push(i, r[i], v, m);
        taken[i] = true;
        div.absorb(&full, &single_rows(&mats, i));
    }
    let rounds = log.picks.len() - 1;
    Ok(SelectionResult {
        method: Method::Exact,
        budget_s: budget,
        total_selected_s: log.total,
        picks: log.picks,
        pool_size: n,
        rounds,
        exhausted,
    })
}

/// Batched greedy MMR from precomputed relevance.
///
/// 1. `T = alpha * sum(d)`.
/// 2. Keep the top `ceil(rho * N)` candidates by relevance (ties by index).
/// 3. Commit the most relevant candidate.
/// 4. While the selected duration is below `T` and candidates remain:
///    score each remaining candidate by MMR with diversity measured against
///    everything committed so far, then commit the top `B` in score order.
///
/// Candidates committed in the same round are not penalized against each
/// other, so for `B > 1` the result can differ from [`greedy_mmr_exact`].
pub fn batched_mmr_scored(
    relevance: &RelevanceVector,
    views: &ViewSet,
    durations: &[f64],
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let n = check_inputs(relevance, durations)?;
    let r = relevance.as_slice();
    let mats = weighted_views(views, &cfg.weights, n)?;
    let budget = duration_budget(durations, cfg.subset_fraction);
    let lambda = cfg.lambda;
    let batch = cfg.batch_size;

    let pool_size = prefilter_size(n, cfg.prefilter_fraction);
    let expected = (cfg.subset_fraction * n as f64).ceil() as usize;
    if pool_size < 2 * expected {
        log::warn!(
            "prefilter pool of {pool_size} is less than twice the expected {expected} picks"
        );
    }
    let mut order: Vec<usize> = (0..n).collect();
    let by_relevance = |a: &usize, b: &usize| rank_order((r[*a], *a), (r[*b], *b));
    if pool_size < n {
        order.select_nth_unstable_by(pool_size - 1, by_relevance);
        order.truncate(pool_size);
    }
    order.sort_unstable_by(by_relevance);

    let mut log = PickLog::new(durations);
    let seed = order[0];
    log.push(seed, r[seed], 0.0, mmr_score(lambda, r[seed], 0.0));

    // Remaining pool, compacted after every round so rows stay contiguous.
    let mut remaining: Vec<usize> = order[1..].to_vec();
    let mut pool_rows: Vec<Matrix> = mats.iter().map(|m| m.gather(&remaining)).collect();
    let mut div = Diversity::new(mats.len(), remaining.len());
    div.absorb(&pool_rows, &single_rows(&mats, seed));

    let mut rounds = 0;
    let mut exhausted = false;
    while log.total < budget {
        if remaining.is_empty() {
            exhausted = true;
            break;
        }
        let weights = &cfg.weights;
        let div_ref = &div;
        let mut scored: Vec<(f64, usize, usize, f64)> = remaining
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let v = div_ref.penalty(weights, pos);
                (mmr_score(lambda, r[i], v), i, pos, v)
            })
            .collect();
        let by_score = |a: &(f64, usize, usize, f64), b: &(f64, usize, usize, f64)| {
            rank_order((a.0, a.1), (b.0, b.1))
        };
        if scored.len() > batch {
            scored.select_nth_unstable_by(batch - 1, by_score);
            scored.truncate(batch);
        }
        scored.sort_unstable_by(by_score);

        let mut keep = vec![true; remaining.len()];
        let mut committed = Vec::with_capacity(scored.len());
        for &(m, i, pos, v) in &scored {
            log.push(i, r[i], v, m);
            keep[pos] = false;
            committed.push(i);
        }
        rounds += 1;

        let mut it = keep.iter();
        remaining.retain(|_| *it.next().unwrap());
        if remaining.is_empty() {
            continue;
        }
        let kept: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(p, &k)| k.then_some(p))
            .collect();
        pool_rows = pool_rows.iter().map(|m| m.gather(&kept)).collect();
        div.retain(&keep);
        let new_rows: Vec<Matrix> = mats.iter().map(|m| m.gather(&committed)).collect();
        div.absorb(&pool_rows, &new_rows);
    }

    Ok(SelectionResult {
        method: Method::Mmr,
        budget_s: budget,
        total_selected_s: log.total,
        picks: log.picks,
        pool_size,
        rounds,
        exhausted,
    })
}

/// Full batched selection: fused, dataset-aggregated relevance followed by
/// [`batched_mmr_scored`].
pub fn batched_mmr(
    corpus: &CorpusManifest,
    targets: &TargetSet,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(SelectionError::EmptyCorpus);
    }
    targets.check_views(cfg.weights.names())?;
    let relevance = relevance_multi_dataset(&corpus.views, targets, &cfg.weights, cfg.aggregation)?;
    batched_mmr_scored(&relevance, &corpus.views, &corpus.durations(), cfg)
}
