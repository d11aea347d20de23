use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_fraction, duration_budget, Method, PickLog, Result, SelectionError, SelectionResult,
};

pub const DEFAULT_DURATION_BINS: usize = 20;

fn finish(log: PickLog<'_>, method: Method, budget: f64, pool: usize) -> SelectionResult {
    SelectionResult {
        method,
        exhausted: log.total < budget,
        budget_s: budget,
        total_selected_s: log.total,
        picks: log.picks,
        pool_size: pool,
        rounds: 0,
    }
}

/// Seeded uniform shuffle, then the shortest prefix that reaches the budget.
pub fn random_baseline(durations: &[f64], alpha: f64, seed: u64) -> Result<SelectionResult> {
    check_fraction("subset_fraction", alpha)?;
    if durations.is_empty() {
        return Err(SelectionError::EmptyCorpus);
    }
    let budget = duration_budget(durations, alpha);
    let mut order: Vec<usize> = (0..durations.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut log = PickLog::new(durations);
    for i in order {
        if log.total >= budget {
            break;
        }
        log.push(i, 0.0, 0.0, 0.0);
    }
    Ok(finish(log, Method::Random, budget, durations.len()))
}

/// Interior quantile edges (`bins - 1` of them) of `values`, using linear
/// interpolation between order statistics.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..bins)
        .map(|j| {
            let pos = (n - 1) as f64 * j as f64 / bins as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        })
        .collect()
}

/// Bin index of `x`: the number of interior edges at or below it.
pub(crate) fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e <= x)
}

/// Samples source utterances so the selected duration mass per target
/// quantile bin follows the target's.
///
/// Bins are the `bins` quantile intervals of the target durations. The
/// budget is split across bins in proportion to the target duration mass
/// in each, and each bin is filled from a seeded shuffle of its source
/// members. A bin that runs dry hands its shortfall to the nearest bin that
/// still has members (lower bin on ties).
pub fn duration_baseline(
    source: &[f64],
    target: &[f64],
    alpha: f64,
    seed: u64,
    bins: usize,
) -> Result<SelectionResult> {
    check_fraction("subset_fraction", alpha)?;
    if source.is_empty() {
        return Err(SelectionError::EmptyCorpus);
    }
    if target.is_empty() {
        return Err(SelectionError::EmptyTargetDurations);
    }
    if bins == 0 {
        return Err(SelectionError::OutOfRange {
            name: "bins",
            value: 0.0,
            range: ">= 1",
        });
    }
    let budget = duration_budget(source, alpha);
    let edges = quantile_edges(target, bins);

    let mut mass = vec![0.0; bins];
    for &d in target {
        mass[bin_of(&edges, d)] += d;
    }
    let target_total: f64 = mass.iter().sum();
    let alloc: Vec<f64> = mass.iter().map(|m| budget * (m / target_total)).collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &d) in source.iter().enumerate() {
        members[bin_of(&edges, d)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in &mut members {
        m.shuffle(&mut rng);
        // taken from the back below
        m.reverse();
    }

    let mut log = PickLog::new(source);
    let mut shortfall = vec![0.0; bins];
    for b in 0..bins {
        let mut got = 0.0;
        while got < alloc[b] {
            let Some(i) = members[b].pop() else { break };
            got += source[i];
            log.push(i, 0.0, 0.0, 0.0);
        }
        shortfall[b] = (alloc[b] - got).max(0.0);
    }

    let nearest_nonempty = |members: &[Vec<usize>], b: usize| -> Option<usize> {
        (0..bins)
            .filter(|&c| !members[c].is_empty())
            .min_by_key(|&c| (c.abs_diff(b), c))
    };
    for (b, &short) in shortfall.iter().enumerate() {
        let mut need = short;
        while need > 0.0 {
            let Some(c) = nearest_nonempty(&members, b) else {
                break;
            };
            let i = members[c].pop().expect("nonempty");
            need -= source[i];
            log.push(i, 0.0, 0.0, 0.0);
        }
    }

    // Per-bin allocations can sum to a hair under the budget.
    let heaviest = (0..bins)
        .max_by(|&a, &b| mass[a].total_cmp(&mass[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    while log.total < budget {
        let Some(c) = nearest_nonempty(&members, heaviest) else {
            break;
        };
        let i = members[c].pop().expect("nonempty");
        log.push(i, 0.0, 0.0, 0.0);
    }
    Ok(finish(log, Method::Duration, budget, source.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn random_full_fraction_is_permutation() {
        let d = vec![1.5; 30];
        let res = random_baseline(&d, 1.0, 3).unwrap();
        let mut idx = res.indices();
        assert_ne!(idx, (0..30).collect::<Vec<_>>());
        idx.sort_unstable();
        assert_eq!(idx, (0..30).collect::<Vec<_>>());
        assert!(!res.exhausted);
    }

    #[test]
    fn random_deterministic_and_exact_count() {
        let d = vec![1.0; 10_000];
        let a = random_baseline(&d, 0.05, 11).unwrap();
        let b = random_baseline(&d, 0.05, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.picks.len(), 500);
        assert!(a.picks.iter().all(|p| p.relevance == 0.0 && p.mmr == 0.0));
    }

    #[test]
    fn single_bin_matches_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src: Vec<f64> = (0..500).map(|_| rng.random_range(0.5..20.0)).collect();
        let tgt: Vec<f64> = (0..50).map(|_| rng.random_range(0.5..20.0)).collect();
        let a = duration_baseline(&src, &tgt, 0.1, 42, 1).unwrap();
        let b = random_baseline(&src, 0.1, 42).unwrap();
        assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn constant_target_draws_from_its_bin() {
        let src: Vec<f64> = (0..200).map(|i| 1.0 + (i % 20) as f64).collect();
        let tgt = vec![10.0; 30];
        let res = duration_baseline(&src, &tgt, 0.05, 5, 20).unwrap();
        let edges = quantile_edges(&tgt, 20);
        let bin = bin_of(&edges, 10.0);
        assert!(res
            .picks
            .iter()
            .all(|p| bin_of(&edges, src[p.index]) == bin));
        assert!(res.total_selected_s >= res.budget_s);
    }

    #[test]
    fn exhausted_bin_spills() {
        // target all long; source has only three long utterances
        let mut src = vec![1.0; 100];
        src.extend([50.0, 50.0, 50.0]);
        let tgt = vec![50.0; 10];
        let res = duration_baseline(&src, &tgt, 0.9, 1, 4).unwrap();
        assert!(res.total_selected_s >= res.budget_s);
        assert_eq!(res.picks.iter().filter(|p| src[p.index] == 50.0).count(), 3);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(
            random_baseline(&[], 0.5, 0),
            Err(SelectionError::EmptyCorpus)
        );
        assert_eq!(
            duration_baseline(&[1.0], &[], 0.5, 0, 4),
            Err(SelectionError::EmptyTargetDurations)
        );
    }
}
