//! Cross-view predictability probe.
//!
//! Cluster one view with k-means, then train a multinomial logistic
//! regression on another view to predict those cluster ids. High held-out
//! accuracy means the two views share structure; accuracy near chance means
//! the target view carries information the source view does not.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::dot_f64;
use crate::kmeans::{kmeans, KMeansConfig, KMeansError};
use crate::store::{EmbeddingView, ViewSet};

const CHUNK: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("{0} rows but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("train/held-out split lacks two distinct labels (train {train}, held-out {held_out})")]
    DegenerateSplit { train: usize, held_out: usize },
    #[error("probe needs at least two views")]
    TooFewViews,
    #[error("{name} = {value} out of range")]
    InvalidConfig { name: &'static str, value: f64 },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub clusters: usize,
    pub train_fraction: f64,
    pub l2_penalty: f64,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            clusters: 100,
            train_fraction: 0.8,
            l2_penalty: 1e-4,
            max_epochs: 200,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, value| Err(ProbeError::InvalidConfig { name, value });
        if self.clusters == 0 {
            return bad("clusters", 0.0);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", self.train_fraction);
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad("l2_penalty", self.l2_penalty);
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", 0.0);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", self.learning_rate);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub source: String,
    pub target: String,
    pub accuracy: f64,
    /// Majority-class rate on the held-out split.
    pub chance: f64,
    pub train_size: usize,
    pub held_out_size: usize,
}

/// k-means cluster ids of the view's rows, `cfg.clusters` clusters.
pub fn pseudo_label(view: &EmbeddingView, cfg: &ProbeConfig) -> Result<Vec<usize>> {
    if view.rows() < cfg.clusters {
        return Err(ProbeError::TooFewRows {
            needed: cfg.clusters,
            got: view.rows(),
        });
    }
    let km = KMeansConfig {
        k: cfg.clusters,
        seed: cfg.seed,
        ..KMeansConfig::default()
    };
    Ok(kmeans(&view.matrix, &km)?.assignments)
}

/// Softmax regression with an L2 penalty on the weights (not the bias).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegression {
    pub classes: usize,
    pub dims: usize,
    /// `classes * dims`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Dense f64 feature rows with labels.
pub struct Samples<'a> {
    pub x: &'a [f64],
    pub y: &'a [usize],
    pub dims: usize,
}

impl SoftmaxRegression {
    pub fn zeros(classes: usize, dims: usize) -> Self {
        Self {
            classes,
            dims,
            weights: vec![0.0; classes * dims],
            bias: vec![0.0; classes],
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dims..(c + 1) * self.dims];
            *o = self.bias[c] + dot_f64(w, x);
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits(x, &mut z);
        crate::kernels::argmax(&z).unwrap_or(0)
    }

    /// Mean cross-entropy plus `l2/2 * |W|^2`, and its gradient as a model
    /// of the same shape. Partial sums over fixed sample chunks are merged
    /// in chunk order.
    pub fn loss_and_grad(&self, s: &Samples<'_>, l2: f64) -> (f64, SoftmaxRegression) {
        let n = s.y.len();
        let (c_n, d) = (self.classes, self.dims);
        let partials: Vec<(f64, Vec<f64>, Vec<f64>)> =
            s.x.par_chunks(CHUNK * d)
                .zip(s.y.par_chunks(CHUNK))
                .map(|(xs, ys)| {
                    let mut loss = 0.0;
                    let mut gw = vec![0.0; c_n * d];
                    let mut gb = vec![0.0; c_n];
                    let mut z = vec![0.0; c_n];
                    for (x, &y) in xs.chunks_exact(d).zip(ys) {
                        self.logits(x, &mut z);
                        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for v in z.iter_mut() {
                            *v = (*v - zmax).exp();
                            sum += *v;
                        }
                        loss -= (z[y] / sum).ln();
                        for (c, &e) in z.iter().enumerate() {
                            let g = e / sum - if c == y { 1.0 } else { 0.0 };
                            gb[c] += g;
                            for (gwc, xv) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                                *gwc += g * xv;
                            }
                        }
                    }
                    (loss, gw, gb)
                })
                .collect();
        let mut grad = SoftmaxRegression::zeros(c_n, d);
        let mut loss = 0.0;
        for (l, gw, gb) in partials {
            loss += l;
            for (a, b) in grad.weights.iter_mut().zip(&gw) {
                *a += b;
            }
            for (a, b) in grad.bias.iter_mut().zip(&gb) {
                *a += b;
            }
        }
        let inv = 1.0 / n.max(1) as f64;
        loss *= inv;
        for (g, w) in grad.weights.iter_mut().zip(&self.weights) {
            *g = *g * inv + l2 * w;
        }
        for g in grad.bias.iter_mut() {
            *g *= inv;
        }
        loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        (loss, grad)
    }

    fn stepped(&self, grad: &SoftmaxRegression, lr: f64) -> SoftmaxRegression {
        let mut next = self.clone();
        for (w, g) in next.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in next.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
        next
    }
}

/// Full-batch gradient descent. A step that would raise the loss is
/// rejected and the step size halved, so the returned loss history never
/// increases.
pub fn train(s: &Samples<'_>, classes: usize, cfg: &ProbeConfig) -> (SoftmaxRegression, Vec<f64>) {
    let mut model = SoftmaxRegression::zeros(classes, s.dims);
    let mut lr = cfg.learning_rate;
    let (mut loss, mut grad) = model.loss_and_grad(s, cfg.l2_penalty);
    let mut history = vec![loss];
    for _ in 0..cfg.max_epochs {
        let candidate = model.stepped(&grad, lr);
        let (c_loss, c_grad) = candidate.loss_and_grad(s, cfg.l2_penalty);
        if c_loss <= loss {
            model = candidate;
            loss = c_loss;
            grad = c_grad;
        } else {
            lr *= 0.5;
        }
        history.push(loss);
        if lr < 1e-12 {
            break;
        }
    }
    (model, history)
}

/// Seeded per-label split: each label's members are shuffled and the first
/// `round(train_fraction * n)` go to training, keeping at least one of each
/// side for labels with two or more members.
pub fn stratified_split(
    labels: &[usize],
    train_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = if n == 1 {
            1
        } else {
            ((train_fraction * n as f64).round() as usize).clamp(1, n - 1)
        };
        train.extend_from_slice(&members[..n_train]);
        held.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

fn distinct(labels: impl Iterator<Item = usize>) -> usize {
    let mut v: Vec<usize> = labels.collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn features(view: &EmbeddingView, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .flat_map(|&i| view.row(i).iter().map(|&v| f64::from(v)))
        .collect()
}

/// Per-dimension z-scoring with training-split statistics.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[f64], dims: usize) -> Self {
        let n = (x.len() / dims).max(1) as f64;
        let mut mean = vec![0.0; dims];
        for row in x.chunks_exact(dims) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for row in x.chunks_exact(dims) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, x: &mut [f64]) {
        let dims = self.mean.len();
        for row in x.chunks_exact_mut(dims) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
    }
}

/// Trains on a seeded stratified split of `source` rows and reports
/// held-out accuracy at predicting `labels`.
pub fn fit_predict(
    source: &EmbeddingView,
    target_name: &str,
    labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if source.rows() != labels.len() {
        return Err(ProbeError::LengthMismatch(source.rows(), labels.len()));
    }
    let (train_idx, held_idx) = stratified_split(labels, cfg.train_fraction, cfg.seed);
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let held_labels: Vec<usize> = held_idx.iter().map(|&i| labels[i]).collect();
    let (dt, dh) = (
        distinct(train_labels.iter().copied()),
        distinct(held_labels.iter().copied()),
    );
    if dt < 2 || dh < 2 {
        return Err(ProbeError::DegenerateSplit {
            train: dt,
            held_out: dh,
        });
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let dims = source.dims();
    let mut x_train = features(source, &train_idx);
    let scale = Standardizer::fit(&x_train, dims);
    scale.apply(&mut x_train);
    let samples = Samples {
        x: &x_train,
        y: &train_labels,
        dims,
    };
    let (model, _) = train(&samples, classes, cfg);

    let mut x_held = features(source, &held_idx);
    scale.apply(&mut x_held);
    let correct = x_held
        .par_chunks(dims)
        .zip(held_labels.par_iter())
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    let mut counts = vec![0usize; classes];
    for &l in &held_labels {
        counts[l] += 1;
    }
    let held_n = held_labels.len() as f64;
    Ok(ProbeReport {
        source: source.name.clone(),
        target: target_name.to_owned(),
        accuracy: correct as f64 / held_n,
        chance: *counts.iter().max().unwrap_or(&0) as f64 / held_n,
        train_size: train_idx.len(),
        held_out_size: held_idx.len(),
    })
}

/// One report per ordered (source, target) pair, self-pairs included.
/// Pseudo-labels are computed once per target view, and every source sees
/// the same split of a given target's labels.
pub fn probe_matrix(views: &ViewSet, cfg: &ProbeConfig) -> Result<Vec<ProbeReport>> {
    if views.len() < 2 {
        return Err(ProbeError::TooFewViews);
    }
    let rows = views.values().next().map_or(0, EmbeddingView::rows);
    if let Some(v) = views.values().find(|v| v.rows() != rows) {
        return Err(ProbeError::LengthMismatch(v.rows(), rows));
    }
    let mut labels = BTreeMap::new();
    for (name, view) in views {
        labels.insert(name.as_str(), pseudo_label(view, cfg)?);
    }
    let mut reports = Vec::with_capacity(views.len() * views.len());
    for source in views.values() {
        for (target, l) in &labels {
            reports.push(fit_predict(source, target, l, cfg)?);
        }
    }
    Ok(reports)
}

/// Source-by-target accuracy table in percent with one decimal.
pub fn format_table(reports: &[ProbeReport]) -> String {
    let mut names: Vec<&str> = reports.iter().map(|r| r.source.as_str()).collect();
    names.dedup();
    let mut targets: Vec<&str> = reports.iter().map(|r| r.target.as_str()).collect();
    targets.sort_unstable();
    targets.dedup();
    let width = names
        .iter()
        .chain(&targets)
        .map(|s| s.len())
        .max()
        .unwrap_or(6)
        .max(8);
    let mut s = format!("{:<width$}", "source\\target");
    for t in &targets {
        s.push_str(&format!(" {t:>width$}"));
    }
    s.push('\n');
    for src in &names {
        s.push_str(&format!("{src:<width$}"));
        for t in &targets {
            let acc = reports
                .iter()
                .find(|r| r.source == *src && r.target == *t)
                .map_or(f64::NAN, |r| r.accuracy);
            s.push_str(&format!(" {:>width$.1}", 100.0 * acc));
        }
        s.push('\n');
    }
    s.push_str(&format!("{:<width$}", "chance"));
    for t in &targets {
        let chance = reports
            .iter()
            .find(|r| r.target == *t)
            .map_or(f64::NAN, |r| r.chance);
        s.push_str(&format!(" {:>width$.1}", 100.0 * chance));
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Matrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn view(name: &str, m: Matrix) -> EmbeddingView {
        EmbeddingView::new(name, m, false)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, c, d) = (10, 3, 5);
        let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<usize> = (0..n).map(|i| i % c).collect();
        let s = Samples {
            x: &x,
            y: &y,
            dims: d,
        };
        let mut model = SoftmaxRegression::zeros(c, d);
        for w in model.weights.iter_mut().chain(model.bias.iter_mut()) {
            *w = rng.sample::<f64, _>(StandardNormal) * 0.5;
        }
        let l2 = 1e-2;
        let (_, grad) = model.loss_and_grad(&s, l2);
        let h = 1e-5;
        let numeric = |m: &SoftmaxRegression| m.loss_and_grad(&s, l2).0;
        for k in 0..c * d {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            plus.weights[k] += h;
            minus.weights[k] -= h;
            let fd = (numeric(&plus) - numeric(&minus)) / (2.0 * h);
            let a = grad.weights[k];
            assert!(
                (fd - a).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-8),
                "{k}: {a} vs {fd}"
            );
        }
        for k in 0..c {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            plus.bias[k] += h;
            minus.bias[k] -= h;
            let fd = (numeric(&plus) - numeric(&minus)) / (2.0 * h);
            let a = grad.bias[k];
            assert!((fd - a).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-8));
        }
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, d) = (200, 4);
        let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let s = Samples {
            x: &x,
            y: &y,
            dims: d,
        };
        let cfg = ProbeConfig {
            learning_rate: 50.0,
            max_epochs: 100,
            ..ProbeConfig::default()
        };
        let (_, hist) = train(&s, 5, &cfg);
        for w in hist.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    fn blobs(per: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for sign in [1.0f32, -1.0] {
            for _ in 0..per {
                let mut r = vec![5.0 * sign, 0.0, 0.0];
                for v in &mut r {
                    *v += 0.1 * rng.sample::<f32, _>(StandardNormal);
                }
                rows.push(r);
            }
        }
        Matrix::from_rows(&rows)
    }

    #[test]
    fn pseudo_label_examples() {
        let m = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [0.5, 0.5]]);
        let cfg = ProbeConfig {
            clusters: 3,
            ..Default::default()
        };
        let mut labels = pseudo_label(&view("a", m.clone()), &cfg).unwrap();
        labels.sort_unstable();
        assert_eq!(labels, [0, 1, 2]);
        let one = ProbeConfig {
            clusters: 1,
            ..Default::default()
        };
        assert_eq!(
            pseudo_label(&view("a", m.clone()), &one).unwrap(),
            [0, 0, 0]
        );
        let four = ProbeConfig {
            clusters: 4,
            ..Default::default()
        };
        assert_eq!(
            pseudo_label(&view("a", m), &four),
            Err(ProbeError::TooFewRows { needed: 4, got: 3 })
        );

        let b = blobs(50, 3);
        let labels = pseudo_label(
            &view("b", b),
            &ProbeConfig {
                clusters: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(labels[..50].iter().all(|&l| l == labels[0]));
        assert!(labels[50..].iter().all(|&l| l == labels[50]));
        assert_ne!(labels[0], labels[50]);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (train, held) = stratified_split(&labels, 0.8, 5);
        assert_eq!(train.len(), 80);
        assert_eq!(held.len(), 20);
        for l in 0..4 {
            assert_eq!(held.iter().filter(|&&i| labels[i] == l).count(), 5);
        }
        assert_eq!(stratified_split(&labels, 0.8, 5), (train, held));
    }

    #[test]
    fn degenerate_split() {
        let m = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [0.5, 0.5]]);
        let r = fit_predict(&view("a", m), "a", &[0, 0, 1], &ProbeConfig::default());
        assert!(matches!(r, Err(ProbeError::DegenerateSplit { .. })));
    }

    #[test]
    fn matrix_shape_and_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut views = ViewSet::new();
        for name in ["a", "b", "c"] {
            let data = (0..300 * 4)
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect();
            views.insert(name.into(), view(name, Matrix::from_vec(300, 4, data)));
        }
        let cfg = ProbeConfig {
            clusters: 5,
            max_epochs: 30,
            ..Default::default()
        };
        let reports = probe_matrix(&views, &cfg).unwrap();
        assert_eq!(reports.len(), 9);
        let table = format_table(&reports);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("chance"));
        assert_eq!(reports, probe_matrix(&views, &cfg).unwrap());
    }
}
