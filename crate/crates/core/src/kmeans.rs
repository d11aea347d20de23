//! Lloyd's k-means with k-means++ seeding, and target-set compaction.
//!
//! Assignment and centroid accumulation run over fixed-size point chunks in
//! parallel; per-chunk partial sums are merged in chunk order, so results do
//! not depend on the number of worker threads.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::sq_dist_f64;
use crate::store::{normalize_rows, Matrix, TargetSet};

pub const DEFAULT_K: usize = 200;
const CHUNK: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k-means needs at least one row")]
    EmptyInput,
    #[error("k-means needs at least one dimension")]
    ZeroDims,
    #[error("k must be positive")]
    ZeroK,
    #[error("non-finite entry at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KMeansWarning {
    /// Every row is identical, so only one cluster was produced.
    DegenerateInput { requested_k: usize },
    /// Fewer distinct rows than requested clusters; k was reduced.
    FewerDistinctRows { requested_k: usize, distinct: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Relative centroid-shift threshold.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub k: usize,
    pub dims: usize,
    /// `k * dims`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Lloyd updates performed.
    pub iterations: usize,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub warnings: Vec<KMeansWarning>,
}

impl Clustering {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dims..(c + 1) * self.dims]
    }

    pub fn centroids_f32(&self) -> Matrix {
        Matrix::from_vec(
            self.k,
            self.dims,
            self.centroids.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

struct Assignment {
    labels: Vec<usize>,
    dists: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl Assignment {
    fn inertia(&self) -> f64 {
        self.dists.iter().sum()
    }
}

fn nearest(p: &[f64], centroids: &[f64], dims: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.chunks_exact(dims).enumerate() {
        let d = sq_dist_f64(p, cent);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn assign(points: &[f64], dims: usize, centroids: &[f64], k: usize) -> Assignment {
    let partials: Vec<Assignment> = points
        .par_chunks(CHUNK * dims)
        .map(|chunk| {
            let n = chunk.len() / dims;
            let mut part = Assignment {
                labels: Vec::with_capacity(n),
                dists: Vec::with_capacity(n),
                sums: vec![0.0; k * dims],
                counts: vec![0; k],
            };
            for p in chunk.chunks_exact(dims) {
                let (c, d) = nearest(p, centroids, dims);
                part.labels.push(c);
                part.dists.push(d);
                part.counts[c] += 1;
                for (s, v) in part.sums[c * dims..(c + 1) * dims].iter_mut().zip(p) {
                    *s += v;
                }
            }
            part
        })
        .collect();
    let mut out = Assignment {
        labels: Vec::with_capacity(points.len() / dims),
        dists: Vec::with_capacity(points.len() / dims),
        sums: vec![0.0; k * dims],
        counts: vec![0; k],
    };
    for part in partials {
        out.labels.extend(part.labels);
        out.dists.extend(part.dists);
        for (a, b) in out.sums.iter_mut().zip(&part.sums) {
            *a += b;
        }
        for (a, b) in out.counts.iter_mut().zip(&part.counts) {
            *a += b;
        }
    }
    out
}

/// Moves the point farthest from its centroid (from a cluster with more than
/// one member) onto each empty centroid. Returns false if nothing was empty.
fn repair_empty(points: &[f64], dims: usize, centroids: &mut [f64], asg: &Assignment) -> bool {
    let mut counts = asg.counts.clone();
    let mut dists = asg.dists.clone();
    let mut repaired = false;
    for e in 0..counts.len() {
        if counts[e] != 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[asg.labels[i]] <= 1 {
                continue;
            }
            if far.is_none_or(|f| d > dists[f]) {
                far = Some(i);
            }
        }
        let Some(p) = far else { break };
        if dists[p] == 0.0 {
            break;
        }
        counts[asg.labels[p]] -= 1;
        counts[e] = 1;
        dists[p] = 0.0;
        centroids[e * dims..(e + 1) * dims].copy_from_slice(&points[p * dims..(p + 1) * dims]);
        repaired = true;
    }
    repaired
}

fn count_distinct(points: &[f64], dims: usize, cap: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for p in points.chunks_exact(dims) {
        seen.insert(p.iter().map(|v| v.to_bits()).collect());
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

fn plus_plus(points: &[f64], dims: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dims;
    let mut centroids = Vec::with_capacity(k * dims);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dims..(first + 1) * dims]);
    let mut min_d: Vec<f64> = points
        .par_chunks(dims)
        .map(|p| sq_dist_f64(p, &centroids[..dims]))
        .collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in min_d.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last positive weight
            chosen.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let new = points[pick * dims..(pick + 1) * dims].to_vec();
        centroids.extend_from_slice(&new);
        debug_assert_eq!(centroids.len(), (c + 1) * dims);
        min_d
            .par_iter_mut()
            .zip(points.par_chunks(dims))
            .for_each(|(m, p)| {
                let d = sq_dist_f64(p, &new);
                if d < *m {
                    *m = d;
                }
            });
    }
    centroids
}

pub fn kmeans(rows: &Matrix, cfg: &KMeansConfig) -> Result<Clustering, KMeansError> {
    let n = rows.rows();
    let dims = rows.cols();
    if n == 0 {
        return Err(KMeansError::EmptyInput);
    }
    if dims == 0 {
        return Err(KMeansError::ZeroDims);
    }
    if cfg.k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if let Err(crate::store::StoreError::NonFiniteEntry { row, col }) = rows.check_finite() {
        return Err(KMeansError::NonFinite { row, col });
    }
    let points: Vec<f64> = rows.as_slice().iter().map(|&v| f64::from(v)).collect();

    let mut warnings = Vec::new();
    let mut k = cfg.k.min(n);
    let distinct = count_distinct(&points, dims, k);
    if distinct < k {
        if distinct == 1 {
            log::warn!("k-means: all rows identical, returning a single cluster");
            warnings.push(KMeansWarning::DegenerateInput { requested_k: cfg.k });
        } else {
            log::warn!("k-means: only {distinct} distinct rows, reducing k from {k}");
            warnings.push(KMeansWarning::FewerDistinctRows {
                requested_k: cfg.k,
                distinct,
            });
        }
        k = distinct;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus(&points, dims, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut asg = assign(&points, dims, &centroids, k);
        let mut guard = 0;
        while repair_empty(&points, dims, &mut centroids, &asg) && guard < n {
            asg = assign(&points, dims, &centroids, k);
            guard += 1;
        }
        let inertia = asg.inertia();
        history.push(inertia);
        if converged || iterations >= cfg.max_iters {
            return Ok(Clustering {
                k,
                dims,
                centroids,
                assignments: asg.labels,
                inertia,
                iterations,
                inertia_history: history,
                warnings,
            });
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if asg.counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / asg.counts[c] as f64;
            for (dst, s) in next[c * dims..(c + 1) * dims]
                .iter_mut()
                .zip(&asg.sums[c * dims..(c + 1) * dims])
            {
                *dst = s * inv;
            }
        }
        let shift: f64 = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = centroids.iter().map(|v| v * v).sum::<f64>().sqrt();
        centroids = next;
        iterations += 1;
        converged = shift <= cfg.tol * scale.max(f64::MIN_POSITIVE);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionEntry {
    pub dataset: String,
    pub view: String,
    pub rows_before: usize,
    pub rows_after: usize,
    pub inertia: f64,
    pub iterations: usize,
}

/// Replaces each dataset's per-view rows by their `k` renormalized k-means
/// centroids; sets with at most `k` rows pass through unchanged.
pub fn compact_targets(
    targets: &TargetSet,
    cfg: &KMeansConfig,
) -> Result<(TargetSet, Vec<CompactionEntry>), KMeansError> {
    let mut out = targets.clone();
    let mut report = Vec::new();
    for ds in &mut out.datasets {
        for (view, m) in ds.views.iter_mut() {
            let before = m.rows();
            let (inertia, iterations) = if before <= cfg.k {
                (0.0, 0)
            } else {
                let cl = kmeans(m, cfg)?;
                let mut c = cl.centroids_f32();
                normalize_rows(&mut c);
                *m = c;
                (cl.inertia, cl.iterations)
            };
            report.push(CompactionEntry {
                dataset: ds.name.clone(),
                view: view.clone(),
                rows_before: before,
                rows_after: m.rows(),
                inertia,
                iterations,
            });
        }
    }
    out.compacted = true;
    Ok((out, report))
}

pub fn format_report(entries: &[CompactionEntry]) -> String {
    let mut s = String::from("dataset\tview\trows_before\trows_after\tinertia\titerations\n");
    for e in entries {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{}\n",
            e.dataset, e.view, e.rows_before, e.rows_after, e.inertia, e.iterations
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TargetDataset;
    use rand_distr::StandardNormal;
    use std::collections::BTreeMap;

    fn blobs(per: usize, dims: usize, sigma: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for sign in [5.0, -5.0] {
            for _ in 0..per {
                for d in 0..dims {
                    let z: f64 = rng.sample(StandardNormal);
                    let base = if d == 0 { sign } else { 0.0 };
                    data.push((base + sigma * z) as f32);
                }
            }
        }
        Matrix::from_vec(2 * per, dims, data)
    }

    fn random_rows(n: usize, dims: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dims)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        Matrix::from_vec(n, dims, data)
    }

    #[test]
    fn k_equals_n_is_exact_cover() {
        let m = random_rows(12, 3, 1);
        let cl = kmeans(
            &m,
            &KMeansConfig {
                k: 12,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cl.inertia, 0.0);
        let mut seen = cl.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn k_one_is_mean() {
        let m = random_rows(50, 4, 2);
        let cl = kmeans(
            &m,
            &KMeansConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for d in 0..4 {
            let mean: f64 = m.iter_rows().map(|r| f64::from(r[d])).sum::<f64>() / 50.0;
            assert!((cl.centroid(0)[d] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn two_blobs_recovered() {
        let m = blobs(100, 4, 0.1, 3);
        let cl = kmeans(
            &m,
            &KMeansConfig {
                k: 2,
                seed: 9,
                ..Default::default()
            },
        )
        .unwrap();
        for (range, sign) in [(0..100, 1.0), (100..200, -1.0)] {
            let rows: Vec<usize> = range.collect();
            let mean: Vec<f64> = (0..4)
                .map(|d| rows.iter().map(|&i| f64::from(m.row(i)[d])).sum::<f64>() / 100.0)
                .collect();
            let c = if cl.centroid(0)[0] * sign > 0.0 { 0 } else { 1 };
            for (got, want) in cl.centroid(c).iter().zip(&mean) {
                assert!((got - want).abs() < 0.05);
            }
            assert!(rows.iter().all(|&i| cl.assignments[i] == c));
        }
    }

    #[test]
    fn inertia_non_increasing_and_assignments_nearest() {
        let m = random_rows(600, 5, 4);
        let cl = kmeans(
            &m,
            &KMeansConfig {
                k: 17,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        for w in cl.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
        assert!(cl.cluster_sizes().iter().all(|&s| s > 0));
        for (i, r) in m.iter_rows().enumerate() {
            let p: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
            let own = sq_dist_f64(&p, cl.centroid(cl.assignments[i]));
            for c in 0..cl.k {
                assert!(own <= sq_dist_f64(&p, cl.centroid(c)) + 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let m = random_rows(300, 3, 6);
        let cfg = KMeansConfig {
            k: 8,
            seed: 77,
            ..Default::default()
        };
        let a = kmeans(&m, &cfg).unwrap();
        let b = kmeans(&m, &cfg).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn identical_rows_degenerate_warning() {
        let m = Matrix::from_rows(&[[0.6f32, 0.8]; 5]);
        let cl = kmeans(
            &m,
            &KMeansConfig {
                k: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cl.k, 1);
        assert_eq!(
            cl.warnings,
            vec![KMeansWarning::DegenerateInput { requested_k: 3 }]
        );
    }

    #[test]
    fn duplicates_reduce_k() {
        let m = Matrix::from_rows(&[
            [1.0f32, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.0, 1.0],
            [0.5, 0.5],
        ]);
        let cl = kmeans(
            &m,
            &KMeansConfig {
                k: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cl.k, 3);
        assert_eq!(cl.inertia, 0.0);
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(
            kmeans(&Matrix::zeros(0, 3), &KMeansConfig::default()).unwrap_err(),
            KMeansError::EmptyInput
        );
    }

    fn target_set(rows: Vec<Matrix>) -> TargetSet {
        TargetSet {
            datasets: rows
                .into_iter()
                .enumerate()
                .map(|(i, m)| {
                    let mut views = BTreeMap::new();
                    let mut m = m;
                    normalize_rows(&mut m);
                    views.insert("v".to_string(), m);
                    TargetDataset {
                        name: format!("d{i}"),
                        views,
                        records: Vec::new(),
                    }
                })
                .collect(),
            compacted: false,
        }
    }

    #[test]
    fn compaction_cardinality() {
        let ts = target_set(vec![random_rows(150, 8, 1), random_rows(1000, 8, 2)]);
        let cfg = KMeansConfig {
            k: 200,
            max_iters: 20,
            ..Default::default()
        };
        let (out, report) = compact_targets(&ts, &cfg).unwrap();
        assert!(out.compacted);
        assert_eq!(out.datasets[0].views["v"], ts.datasets[0].views["v"]);
        assert_eq!(out.datasets[1].views["v"].rows(), 200);
        assert_eq!(report[1].rows_before, 1000);
        assert_eq!(report[1].rows_after, 200);
        for r in out.datasets[1].views["v"].iter_rows() {
            let n: f64 = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn compaction_of_copies() {
        let u = [0.6f32, 0.0, 0.8];
        let ts = target_set(vec![Matrix::from_rows(&[u, u, u])]);
        let cfg = KMeansConfig {
            k: 1,
            ..Default::default()
        };
        let (out, _) = compact_targets(&ts, &cfg).unwrap();
        let m = &out.datasets[0].views["v"];
        assert_eq!(m.rows(), 1);
        for (a, b) in m.row(0).iter().zip(u) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
