//! Inner-product kernels shared by every scoring path.
//!
//! All similarity values in the crate come from [`dot`] (or [`dot4`], which
//! performs the same arithmetic for four rows at once), so two code paths
//! that compare the same pair of rows always see bit-identical values.

use std::cmp::Ordering;

const LANES: usize = 8;

#[inline]
fn finish(acc: [f32; LANES], tail: f32) -> f32 {
    let a = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let b = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    (a + b) + tail
}

/// Dot product with a fixed 8-lane accumulation order.
///
/// Panics (debug) if lengths differ.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    finish(acc, tail)
}

/// Four dot products `rows[r] . v` with exactly the arithmetic of [`dot`].
#[inline]
pub fn dot4(rows: [&[f32]; 4], v: &[f32]) -> [f32; 4] {
    let n = v.len();
    let mut acc = [[0.0f32; LANES]; 4];
    let full = n - n % LANES;
    let mut i = 0;
    while i < full {
        let y = &v[i..i + LANES];
        for r in 0..4 {
            let x = &rows[r][i..i + LANES];
            for l in 0..LANES {
                acc[r][l] += x[l] * y[l];
            }
        }
        i += LANES;
    }
    let mut out = [0.0f32; 4];
    for r in 0..4 {
        let mut tail = 0.0f32;
        for j in full..n {
            tail += rows[r][j] * v[j];
        }
        out[r] = finish(acc[r], tail);
    }
    out
}

/// Cosine of two unit-or-zero rows: their dot product clamped to [-1, 1].
#[inline]
pub fn unit_cosine(a: &[f32], b: &[f32]) -> f64 {
    f64::from(dot(a, b)).clamp(-1.0, 1.0)
}

/// `R x T` dot products `rows[r] . targets[t]`, each with exactly the
/// arithmetic of [`dot`].
#[inline(always)]
fn dot_block<const R: usize, const T: usize>(
    rows: [&[f32]; R],
    targets: [&[f32]; T],
    dims: usize,
) -> [[f32; T]; R] {
    let full = dims - dims % LANES;
    let mut acc = [[[0.0f32; LANES]; T]; R];
    let mut i = 0;
    while i < full {
        let y: [&[f32; LANES]; T] =
            std::array::from_fn(|t| targets[t][i..i + LANES].try_into().unwrap());
        for r in 0..R {
            let x: &[f32; LANES] = rows[r][i..i + LANES].try_into().unwrap();
            for t in 0..T {
                for l in 0..LANES {
                    acc[r][t][l] += x[l] * y[t][l];
                }
            }
        }
        i += LANES;
    }
    let mut out = [[0.0f32; T]; R];
    for r in 0..R {
        for t in 0..T {
            let mut tail = 0.0f32;
            for j in full..dims {
                tail += rows[r][j] * targets[t][j];
            }
            out[r][t] = finish(acc[r][t], tail);
        }
    }
    out
}

const BLOCK_R: usize = 4;
const BLOCK_T: usize = 2;

/// Running max of `unit_cosine(row, t)` over `targets` (row-major, `dims`
/// wide), for each row in `rows`. `out` must hold one slot per row and is
/// updated in place.
pub fn max_cosine_into(rows: &[f32], targets: &[f32], dims: usize, out: &mut [f32]) {
    if dims == 0 {
        return;
    }
    let n = rows.len() / dims;
    let m = targets.len() / dims;
    debug_assert_eq!(out.len(), n);
    let row = |i: usize| &rows[i * dims..(i + 1) * dims];
    let target = |j: usize| &targets[j * dims..(j + 1) * dims];
    let row_blocks = n / BLOCK_R;
    let target_blocks = m / BLOCK_T;
    for q in 0..row_blocks {
        let base = q * BLOCK_R;
        let r: [&[f32]; BLOCK_R] = std::array::from_fn(|k| row(base + k));
        let mut best: [f32; BLOCK_R] = std::array::from_fn(|k| out[base + k]);
        for tb in 0..target_blocks {
            let t: [&[f32]; BLOCK_T] = std::array::from_fn(|k| target(tb * BLOCK_T + k));
            let d = dot_block(r, t, dims);
            for k in 0..BLOCK_R {
                for v in d[k] {
                    if v > best[k] {
                        best[k] = v;
                    }
                }
            }
        }
        for j in target_blocks * BLOCK_T..m {
            let d = dot4(r, target(j));
            for k in 0..BLOCK_R {
                if d[k] > best[k] {
                    best[k] = d[k];
                }
            }
        }
        out[base..base + BLOCK_R].copy_from_slice(&best);
    }
    for (i, slot) in out.iter_mut().enumerate().skip(row_blocks * BLOCK_R) {
        let r = row(i);
        for j in 0..m {
            let d = dot(r, target(j));
            if d > *slot {
                *slot = d;
            }
        }
    }
}

/// Clamp a raw dot product into the cosine range.
#[inline]
pub fn clamp_cosine(v: f32) -> f64 {
    f64::from(v).clamp(-1.0, 1.0)
}

/// Descending by score, then ascending by index. A strict total order as
/// long as indices are distinct.
#[inline]
pub fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Index of the largest score, lowest index on ties. `None` if empty.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// f64 dot product with a fixed 4-lane accumulation order.
#[inline]
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Squared Euclidean distance in f64.
#[inline]
pub fn sq_dist_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}
