//! Synthetic corpora for tests, demos and benchmarks.
//!
//! Every view places utterances around one of `clusters` random unit
//! centers; an utterance keeps its cluster across views. Target datasets
//! are drawn from chosen clusters. Everything derives from one seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::store::{
    normalize_rows, save_corpus, save_targets, CorpusManifest, EmbeddingView, Matrix, StoreError,
    TargetDataset, TargetSet, UtteranceRecord, ViewSet,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub utterances: usize,
    pub clusters: usize,
    /// (view name, dims)
    pub views: Vec<(String, usize)>,
    /// (dataset name, source cluster, rows)
    pub targets: Vec<(String, usize, usize)>,
    /// Norm of the per-row noise relative to the unit cluster center.
    pub spread: f32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            utterances: 2000,
            clusters: 10,
            views: vec![
                ("speaker".into(), 768),
                ("wavlm".into(), 512),
                ("sbert".into(), 384),
            ],
            targets: vec![("target_a".into(), 0, 300), ("target_b".into(), 3, 300)],
            spread: 1.0,
            min_duration_s: 1.0,
            max_duration_s: 20.0,
            seed: 2024,
        }
    }
}

pub struct Fixture {
    pub corpus: CorpusManifest,
    pub targets: TargetSet,
    /// Cluster of each source utterance.
    pub clusters: Vec<usize>,
}

fn unit_centers(k: usize, dims: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..k * dims)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let mut m = Matrix::from_vec(k, dims, data);
    normalize_rows(&mut m);
    m
}

/// Rows around the given centers, unit-normalized.
pub fn clustered_rows(
    centers: &Matrix,
    labels: &[usize],
    spread: f32,
    rng: &mut ChaCha8Rng,
) -> Matrix {
    let dims = centers.cols();
    let scale = spread / (dims as f32).sqrt();
    let mut m = Matrix::zeros(labels.len(), dims);
    for (i, &c) in labels.iter().enumerate() {
        let row = m.row_mut(i);
        for (v, center) in row.iter_mut().zip(centers.row(c)) {
            *v = center + scale * rng.sample::<f32, _>(StandardNormal);
        }
    }
    normalize_rows(&mut m);
    m
}

/// Unit rows with i.i.d. Gaussian direction.
pub fn random_unit_rows(n: usize, dims: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unit_centers(n, dims, &mut rng)
}

pub fn generate(spec: &FixtureSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g = spec.clusters.max(1);
    let clusters: Vec<usize> = (0..spec.utterances)
        .map(|_| rng.random_range(0..g))
        .collect();
    let records: Vec<UtteranceRecord> = (0..spec.utterances)
        .map(|i| UtteranceRecord {
            id: format!("utt-{i:07}"),
            duration_s: round_ms(rng.random_range(spec.min_duration_s..spec.max_duration_s)),
            dataset: format!("source_{}", i % 3),
        })
        .collect();

    let mut views = ViewSet::new();
    let mut target_views: Vec<Vec<(String, Matrix)>> = vec![Vec::new(); spec.targets.len()];
    for (name, dims) in &spec.views {
        let centers = unit_centers(g, *dims, &mut rng);
        let rows = clustered_rows(&centers, &clusters, spec.spread, &mut rng);
        views.insert(name.clone(), EmbeddingView::new(name.clone(), rows, true));
        for (t, (_, cluster, n)) in spec.targets.iter().enumerate() {
            let labels = vec![*cluster % g; *n];
            let rows = clustered_rows(&centers, &labels, spec.spread, &mut rng);
            target_views[t].push((name.clone(), rows));
        }
    }
    let datasets = spec
        .targets
        .iter()
        .zip(target_views)
        .map(|((name, _, n), tv)| TargetDataset {
            name: name.clone(),
            views: tv.into_iter().collect(),
            records: (0..*n)
                .map(|i| UtteranceRecord {
                    id: format!("{name}-{i:05}"),
                    duration_s: round_ms(
                        rng.random_range(spec.min_duration_s..spec.max_duration_s),
                    ),
                    dataset: name.clone(),
                })
                .collect(),
        })
        .collect();
    Fixture {
        corpus: CorpusManifest::new(records, views).expect("aligned by construction"),
        targets: TargetSet {
            datasets,
            compacted: false,
        },
        clusters,
    }
}

fn round_ms(s: f64) -> f64 {
    (s * 1000.0).round() / 1000.0
}

/// Writes `<dir>/corpus` and `<dir>/targets`.
pub fn write(fixture: &Fixture, dir: &Path) -> Result<(), StoreError> {
    save_corpus(&fixture.corpus, &dir.join("corpus"))?;
    save_targets(&fixture.targets, &dir.join("targets"))
}
