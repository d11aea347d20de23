//! Gaussian random projection of embedding views and the pairwise-cosine
//! preservation audit.
//!
//! The projection matrix has `input_dim x output_dim` entries drawn i.i.d.
//! from `N(0, 1/output_dim)`. Entries are generated in row-major order from a
//! `ChaCha8Rng` seeded with `seed_from_u64(seed)`, sampling `StandardNormal`
//! as `f64` and scaling before rounding to `f32`. ChaCha is a counter-based
//! stream, so a given seed yields the same matrix on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::store::{normalize_in_place, EmbeddingView, Matrix};

pub const DEFAULT_OUTPUT_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("invalid projection dims: input {input_dim}, output {output_dim} (need 0 < output <= input)")]
    InvalidDims { input_dim: usize, output_dim: usize },
    #[error("view has {view_dims} dims but the projection expects {input_dim}")]
    DimensionMismatch { view_dims: usize, input_dim: usize },
    #[error("audit needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("audit views differ in row count: {0} vs {1}")]
    RowCountMismatch(usize, usize),
    #[error("cosine similarities have zero variance; correlation undefined")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self, ProjectionError> {
        if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
            return Err(ProjectionError::InvalidDims {
                input_dim,
                output_dim,
            });
        }
        Ok(Self {
            input_dim,
            output_dim,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub spec: ProjectionSpec,
    /// `input_dim` rows of `output_dim` entries.
    pub matrix: Matrix,
}

pub fn make_projection(spec: ProjectionSpec) -> Result<ProjectionMatrix, ProjectionError> {
    let spec = ProjectionSpec::new(spec.input_dim, spec.output_dim, spec.seed)?;
    let scale = 1.0 / (spec.output_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data: Vec<f32> = (0..spec.input_dim * spec.output_dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (z * scale) as f32
        })
        .collect();
    Ok(ProjectionMatrix {
        spec,
        matrix: Matrix::from_vec(spec.input_dim, spec.output_dim, data),
    })
}

impl ProjectionMatrix {
    /// `x . M` without renormalization.
    pub fn apply_row(&self, x: &[f32], out: &mut [f32]) {
        out.fill(0.0);
        for (xi, mrow) in x.iter().zip(self.matrix.iter_rows()) {
            if *xi == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(mrow) {
                *o += xi * m;
            }
        }
    }
}

/// Projects every row and L2-normalizes the result. Zero rows stay zero.
pub fn project_view(
    view: &EmbeddingView,
    proj: &ProjectionMatrix,
) -> Result<EmbeddingView, ProjectionError> {
    if view.dims() != proj.spec.input_dim {
        return Err(ProjectionError::DimensionMismatch {
            view_dims: view.dims(),
            input_dim: proj.spec.input_dim,
        });
    }
    let out_dim = proj.spec.output_dim;
    let mut out = Matrix::zeros(view.rows(), out_dim);
    out.as_mut_slice()
        .par_chunks_mut(out_dim)
        .zip(view.matrix.as_slice().par_chunks(view.dims()))
        .for_each(|(dst, src)| {
            proj.apply_row(src, dst);
            normalize_in_place(dst);
        });
    Ok(EmbeddingView::new(view.name.clone(), out, true))
}

fn cosine_any(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Pearson correlation of `xs` and `ys`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Samples `pair_count` index pairs with `i != j` and returns the Pearson
/// correlation between their cosines in `hi` and in `lo`.
pub fn audit_cosine_preservation(
    hi: &EmbeddingView,
    lo: &EmbeddingView,
    pair_count: usize,
    seed: u64,
) -> Result<f64, ProjectionError> {
    if hi.rows() != lo.rows() {
        return Err(ProjectionError::RowCountMismatch(hi.rows(), lo.rows()));
    }
    let n = hi.rows();
    if n < 2 {
        return Err(ProjectionError::TooFewRows(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = (0..pair_count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
        .par_iter()
        .map(|&(i, j)| {
            (
                cosine_any(hi.row(i), hi.row(j)),
                cosine_any(lo.row(i), lo.row(j)),
            )
        })
        .unzip();
    pearson(&xs, &ys).ok_or(ProjectionError::ZeroVariance)
}
