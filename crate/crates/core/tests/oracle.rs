//! Selection checked against straightforward re-implementations.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use speechsel::selection::{batched_mmr, duration_baseline, quantile_edges, SelectionConfig};
use speechsel::store::{normalize_rows, TargetDataset, ViewSet};
use speechsel::{
    AggregationMode, CorpusManifest, EmbeddingView, FusionWeights, Matrix, TargetSet,
    UtteranceRecord,
};

fn unit(rows: usize, dims: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * dims)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let mut m = Matrix::from_vec(rows, dims, data);
    normalize_rows(&mut m);
    m
}

struct Case {
    corpus: CorpusManifest,
    targets: TargetSet,
    weights: FusionWeights,
}

fn case(seed: u64, n: usize, dims: &[usize], targets_per_set: &[usize]) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..dims.len()).map(|k| format!("v{k}")).collect();
    let mut views = ViewSet::new();
    for (name, &d) in names.iter().zip(dims) {
        views.insert(
            name.clone(),
            EmbeddingView::new(name.clone(), unit(n, d, &mut rng), true),
        );
    }
    let datasets = targets_per_set
        .iter()
        .enumerate()
        .map(|(t, &rows)| TargetDataset {
            name: format!("t{t}"),
            views: names
                .iter()
                .zip(dims)
                .map(|(name, &d)| (name.clone(), unit(rows, d, &mut rng)))
                .collect(),
            records: Vec::new(),
        })
        .collect();
    let records = (0..n)
        .map(|i| UtteranceRecord {
            id: format!("u{i}"),
            duration_s: rng.random_range(0.5..20.0),
            dataset: "src".into(),
        })
        .collect();
    let weights = FusionWeights::new(
        names
            .iter()
            .map(|k| (k.clone(), rng.random_range(0.2..1.0))),
    )
    .unwrap();
    Case {
        corpus: CorpusManifest::new(records, views).unwrap(),
        targets: TargetSet {
            datasets,
            compacted: false,
        },
        weights,
    }
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

/// Batched selection written out loop by loop, recomputing every
/// similarity from scratch each round.
fn reference_batched(c: &Case, cfg: &SelectionConfig) -> Vec<usize> {
    let n = c.corpus.len();
    let d = c.corpus.durations();
    let t = cfg.subset_fraction * d.iter().sum::<f64>();
    let weights: Vec<(&str, f64)> = c.weights.iter().collect();

    let r: Vec<f64> = (0..n)
        .map(|i| {
            let per_set: Vec<f64> = c
                .targets
                .datasets
                .iter()
                .map(|ds| {
                    weights
                        .iter()
                        .map(|&(k, w)| {
                            let x = c.corpus.views[k].row(i);
                            let tm = &ds.views[k];
                            w * (0..tm.rows())
                                .map(|j| cos(x, tm.row(j)))
                                .fold(f64::MIN, f64::max)
                        })
                        .sum()
                })
                .collect();
            match cfg.aggregation {
                AggregationMode::Max => per_set.iter().copied().fold(f64::MIN, f64::max),
                AggregationMode::Mean => per_set.iter().sum::<f64>() / per_set.len() as f64,
            }
        })
        .collect();

    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    let pool_size = ((cfg.prefilter_fraction * n as f64).ceil() as usize).clamp(1, n);
    let pool = &ranked[..pool_size];

    let mut selected = vec![pool[0]];
    let mut d_sel = d[pool[0]];
    while d_sel < t {
        let remaining: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|i| !selected.contains(i))
            .collect();
        if remaining.is_empty() {
            break;
        }
        let mut scored: Vec<(f64, usize)> = remaining
            .iter()
            .map(|&i| {
                let v: f64 = weights
                    .iter()
                    .map(|&(k, w)| {
                        let view = &c.corpus.views[k];
                        w * selected
                            .iter()
                            .map(|&s| cos(view.row(i), view.row(s)))
                            .fold(f64::MIN, f64::max)
                    })
                    .sum();
                (cfg.lambda * r[i] - (1.0 - cfg.lambda) * v, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in scored.iter().take(cfg.batch_size) {
            selected.push(i);
            d_sel += d[i];
        }
    }
    selected
}

fn config(c: &Case, alpha: f64, lambda: f64, rho: f64, batch: usize) -> SelectionConfig {
    SelectionConfig {
        lambda,
        prefilter_fraction: rho,
        batch_size: batch,
        ..SelectionConfig::new(c.weights.clone(), alpha)
    }
}

#[test]
fn matches_reference_on_worked_configuration() {
    let c = case(1, 500, &[16, 24], &[20]);
    let cfg = config(&c, 0.1, 0.7, 0.5, 8);
    let got = batched_mmr(&c.corpus, &c.targets, &cfg).unwrap();
    assert_eq!(got.indices(), reference_batched(&c, &cfg));

    let d = c.corpus.durations();
    let d_max = d.iter().copied().fold(0.0, f64::max);
    assert!(!got.exhausted);
    assert!(got.budget_s <= got.total_selected_s);
    assert!(got.total_selected_s < got.budget_s + 8.0 * d_max);
    let mut r: Vec<f64> = got.picks.iter().map(|p| p.relevance).collect();
    r.sort_by(f64::total_cmp);
    let pool_floor = {
        let mut all = speechsel::relevance::relevance_multi_dataset(
            &c.corpus.views,
            &c.targets,
            &c.weights,
            AggregationMode::Max,
        )
        .unwrap()
        .0;
        all.sort_by(|a, b| b.total_cmp(a));
        all[249]
    };
    assert!(r[0] >= pool_floor);
}

#[test]
fn matches_reference_across_settings() {
    let settings = [
        (0.2, 0.0, 1.0, 5, AggregationMode::Max),
        (0.3, 0.3, 0.4, 16, AggregationMode::Mean),
        (0.05, 0.7, 0.15, 3, AggregationMode::Max),
        (0.5, 1.0, 0.8, 32, AggregationMode::Mean),
        (0.9, 0.5, 0.3, 4, AggregationMode::Max),
    ];
    for (s, &(alpha, lambda, rho, batch, aggregation)) in settings.iter().enumerate() {
        let c = case(
            10 + s as u64,
            300,
            &[8, 12, 20][..1 + s % 3],
            &[5, 9, 13][..1 + s % 3],
        );
        let cfg = SelectionConfig {
            aggregation,
            ..config(&c, alpha, lambda, rho, batch)
        };
        let got = batched_mmr(&c.corpus, &c.targets, &cfg).unwrap();
        assert_eq!(got.indices(), reference_batched(&c, &cfg), "setting {s}");
    }
}

#[test]
fn permutation_covariance() {
    let c = case(77, 400, &[12, 20], &[15, 6]);
    let cfg = config(&c, 0.1, 0.7, 0.4, 8);
    let base = batched_mmr(&c.corpus, &c.targets, &cfg).unwrap();

    let mut perm: Vec<usize> = (0..400).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let views: ViewSet = c
        .corpus
        .views
        .iter()
        .map(|(k, v)| {
            let m = v.matrix.gather(&perm);
            (k.clone(), EmbeddingView::new(k.clone(), m, true))
        })
        .collect();
    let records = perm.iter().map(|&i| c.corpus.records[i].clone()).collect();
    let shuffled = CorpusManifest::new(records, views).unwrap();
    let got = batched_mmr(&shuffled, &c.targets, &cfg).unwrap();

    let ids = |corpus: &CorpusManifest, idx: Vec<usize>| -> Vec<String> {
        idx.into_iter()
            .map(|i| corpus.records[i].id.clone())
            .collect()
    };
    assert_eq!(
        ids(&c.corpus, base.indices()),
        ids(&shuffled, got.indices())
    );
}

#[test]
fn duration_histogram_follows_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draw = |rng: &mut ChaCha8Rng| (1.5 + 0.6 * rng.sample::<f64, _>(StandardNormal)).exp();
    let source: Vec<f64> = (0..50_000).map(|_| draw(&mut rng)).collect();
    let target: Vec<f64> = (0..1_000).map(|_| draw(&mut rng)).collect();
    let res = duration_baseline(&source, &target, 0.1, 3, 20).unwrap();

    let edges = quantile_edges(&target, 20);
    let bin = |x: f64| edges.partition_point(|&e| e <= x);
    let mut want = [0.0; 20];
    for &t in &target {
        want[bin(t)] += t;
    }
    let want_total: f64 = want.iter().sum();
    let mut got = [0.0; 20];
    for p in &res.picks {
        got[bin(source[p.index])] += source[p.index];
    }
    let got_total: f64 = got.iter().sum();
    for b in 0..20 {
        let diff = (want[b] / want_total - got[b] / got_total).abs();
        assert!(diff <= 0.02, "bin {b}: mass share differs by {diff}");
    }
    assert!(res.total_selected_s >= res.budget_s);
}

#[test]
fn unweighted_views_need_no_target_rows() {
    let mut c = case(3, 50, &[8, 8], &[4]);
    c.targets.datasets[0].views.remove("v1");
    let cfg = config(&c, 0.2, 0.7, 1.0, 4);
    assert!(batched_mmr(&c.corpus, &c.targets, &cfg).is_err());
    let single = SelectionConfig {
        weights: FusionWeights::single("v0"),
        ..cfg
    };
    assert!(batched_mmr(&c.corpus, &c.targets, &single).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn selection_invariants(
        seed in any::<u64>(),
        n in 2usize..120,
        alpha in 0.01f64..=1.0,
        rho in 0.01f64..=1.0,
        lambda in 0.0f64..=1.0,
        batch in 1usize..20,
        views in 1usize..4,
    ) {
        let c = case(seed, n, &[5, 9, 3][..views], &[7]);
        let cfg = config(&c, alpha, lambda, rho, batch);
        let res = batched_mmr(&c.corpus, &c.targets, &cfg).unwrap();
        let idx = res.indices();

        let mut uniq = idx.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), idx.len());
        prop_assert!(res.picks.windows(2).all(|w| w[1].cumulative_duration_s > w[0].cumulative_duration_s));
        prop_assert!(idx.len() <= res.pool_size);
        prop_assert_eq!(res.exhausted, res.total_selected_s < res.budget_s);
        if res.exhausted {
            prop_assert_eq!(idx.len(), res.pool_size);
        }
        let d = c.corpus.durations();
        let d_max = d.iter().copied().fold(0.0, f64::max);
        prop_assert!(res.total_selected_s < res.budget_s + batch as f64 * d_max);
        for p in &res.picks {
            prop_assert!((-1.0..=1.0).contains(&p.relevance));
        }
    }

    #[test]
    fn mean_aggregation_never_scores_above_max(seed in any::<u64>(), sets in 1usize..4) {
        let c = case(seed, 40, &[6], &[3, 8, 5][..sets]);
        let max = speechsel::relevance::relevance_multi_dataset(
            &c.corpus.views, &c.targets, &c.weights, AggregationMode::Max).unwrap();
        let mean = speechsel::relevance::relevance_multi_dataset(
            &c.corpus.views, &c.targets, &c.weights, AggregationMode::Mean).unwrap();
        for (a, b) in mean.0.iter().zip(&max.0) {
            prop_assert!(a <= &(b + 1e-12));
        }
    }
}
