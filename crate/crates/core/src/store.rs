//! On-disk and in-memory data model for embedding views and utterance metadata.
//!
//! An embedding file is a fixed little-endian header followed by a row-major
//! `f32` payload:
//!
//! ```text
//! "EMB1" | version: u32 = 1 | normalized: u8 | rows: u64 | dims: u32 | rows*dims f32
//! ```
//!
//! A manifest is JSON lines with `id`, `duration_s` and `dataset`. Line `i`
//! of the manifest describes row `i` of every view in the same corpus.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::dot;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4;

/// Tolerance on the L2 norm of rows in a file whose header claims unit rows.
pub const NORM_TOLERANCE: f32 = 1e-4;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VIEW_EXT: &str = "emb";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected \"EMB1\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: header declares {rows}x{dims} ({expected} payload bytes) but payload is {actual} bytes")]
    DimensionMismatch {
        path: PathBuf,
        rows: u64,
        dims: u32,
        expected: u128,
        actual: u64,
    },
    #[error("non-finite entry at row {row}, col {col}")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("row {row} has norm {norm} but the view is flagged normalized")]
    NotNormalized { row: usize, norm: f32 },
    #[error("view has zero dimensions")]
    ZeroDims,
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        line: usize,
    },
    #[error("{path}:{line}: non-positive duration {duration}")]
    NonPositiveDuration {
        path: PathBuf,
        line: usize,
        duration: f64,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("view {view:?} has {rows} rows but the manifest has {records} records")]
    RowCountMismatch {
        view: String,
        rows: usize,
        records: usize,
    },
    #[error("{0}: no embedding views found")]
    NoViews(PathBuf),
    #[error("{0}: no target datasets found")]
    NoTargets(PathBuf),
    #[error("target dataset {dataset:?} has no rows for view {view:?}")]
    MissingTargetView { dataset: String, view: String },
    #[error("target dataset {dataset:?} view {view:?} is empty")]
    EmptyTargetView { dataset: String, view: String },
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// # Panics
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact on an empty slice with a zero chunk size panics
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(indices.len(), self.cols, data)
    }

    /// Stacks `other` below `self`. Panics if the column counts differ.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "vstack column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix::from_vec(self.rows + other.rows, self.cols, data)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (row, r) in self.iter_rows().enumerate() {
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(StoreError::NonFiniteEntry { row, col });
            }
        }
        Ok(())
    }
}

/// Scales every nonzero row to unit L2 norm in place and returns the number
/// of zero rows, which are left untouched.
pub fn normalize_rows(m: &mut Matrix) -> usize {
    let cols = m.cols;
    if cols == 0 {
        return m.rows;
    }
    let mut zero_rows = 0;
    for row in m.data.chunks_exact_mut(cols) {
        if !normalize_in_place(row) {
            zero_rows += 1;
        }
    }
    zero_rows
}

/// Returns false if the row is all zeros.
pub(crate) fn normalize_in_place(row: &mut [f32]) -> bool {
    let sq: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
    if sq == 0.0 {
        return false;
    }
    let norm = sq.sqrt();
    if norm == 1.0 {
        return true;
    }
    for v in row.iter_mut() {
        *v = (f64::from(*v) / norm) as f32;
    }
    true
}

/// One embedding space over a corpus: one row per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingView {
    pub name: String,
    pub matrix: Matrix,
    pub normalized: bool,
}

impl EmbeddingView {
    pub fn new(name: impl Into<String>, matrix: Matrix, normalized: bool) -> Self {
        Self {
            name: name.into(),
            matrix,
            normalized,
        }
    }

    pub fn dims(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.matrix.row(i)
    }

    /// Returns the normalized view together with the count of zero rows.
    pub fn l2_normalize(mut self) -> (Self, usize) {
        let zero_rows = normalize_rows(&mut self.matrix);
        if zero_rows > 0 {
            log::warn!(
                "view {:?}: {zero_rows} zero rows left unnormalized",
                self.name
            );
        }
        self.normalized = true;
        (self, zero_rows)
    }

    /// Checks finiteness and, for normalized views, unit row norms.
    pub fn validate(&self) -> Result<()> {
        if self.dims() == 0 {
            return Err(StoreError::ZeroDims);
        }
        self.matrix.check_finite()?;
        if self.normalized {
            for (row, r) in self.matrix.iter_rows().enumerate() {
                let sq = dot(r, r);
                if sq == 0.0 {
                    continue;
                }
                let norm = sq.sqrt();
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(StoreError::NotNormalized { row, norm });
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.matrix.as_slice().len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(u8::from(self.normalized));
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dims() as u32).to_le_bytes());
        for v in self.matrix.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an embedding file image. `path` is only used for error context.
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic {
                path: path.to_path_buf(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::DimensionMismatch {
                path: path.to_path_buf(),
                rows: 0,
                dims: 0,
                expected: HEADER_LEN as u128,
                actual: bytes.len() as u64,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let normalized = bytes[8] != 0;
        let rows = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let dims = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        let expected = u128::from(rows) * u128::from(dims) * 4;
        if expected != payload.len() as u128 {
            return Err(StoreError::DimensionMismatch {
                path: path.to_path_buf(),
                rows,
                dims,
                expected,
                actual: payload.len() as u64,
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let view = EmbeddingView::new(
            name,
            Matrix::from_vec(rows as usize, dims as usize, data),
            normalized,
        );
        view.validate()?;
        Ok(view)
    }
}

/// View name derived from a file path: its stem.
pub fn view_name_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads an embedding file exactly as stored (no normalization).
pub fn load_view(path: &Path) -> Result<EmbeddingView> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    EmbeddingView::from_bytes(view_name_from_path(path), &bytes, path)
}

/// Reads an embedding file and L2-normalizes it unless the header already
/// marks it normalized or `normalize` is false.
pub fn load_view_normalized(path: &Path, normalize: bool) -> Result<EmbeddingView> {
    let view = load_view(path)?;
    if normalize && !view.normalized {
        Ok(view.l2_normalize().0)
    } else {
        Ok(view)
    }
}

pub fn save_view(view: &EmbeddingView, path: &Path) -> Result<()> {
    crate::atomic::write(path, &view.to_bytes()).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub duration_s: f64,
    pub dataset: String,
}

/// Parses JSON-lines manifest text. Blank lines are rejected: line index is
/// row index.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<UtteranceRecord>> {
    parse_manifest_lines(text.lines().map(|l| Ok(l.to_owned())), path)
}

fn parse_manifest_lines<I>(lines: I, path: &Path) -> Result<Vec<UtteranceRecord>>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        let rec: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| StoreError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if !(rec.duration_s > 0.0 && rec.duration_s.is_finite()) {
            return Err(StoreError::NonPositiveDuration {
                path: path.to_path_buf(),
                line: line_no,
                duration: rec.duration_s,
            });
        }
        if seen.insert(rec.id.clone(), line_no).is_some() {
            return Err(StoreError::DuplicateId {
                path: path.to_path_buf(),
                id: rec.id,
                line: line_no,
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_manifest_lines(BufReader::new(file).lines(), path)
}

pub fn manifest_to_string(records: &[UtteranceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(records: &[UtteranceRecord], path: &Path) -> Result<()> {
    crate::atomic::write(path, manifest_to_string(records).as_bytes()).map_err(io_err(path))
}

/// Named views keyed by view name; iteration order is by name.
pub type ViewSet = BTreeMap<String, EmbeddingView>;

/// Utterance records plus every embedding view over them.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
    pub views: ViewSet,
}

impl CorpusManifest {
    pub fn new(records: Vec<UtteranceRecord>, views: ViewSet) -> Result<Self> {
        if views.is_empty() {
            return Err(StoreError::NoViews(PathBuf::new()));
        }
        for view in views.values() {
            if view.rows() != records.len() {
                return Err(StoreError::RowCountMismatch {
                    view: view.name.clone(),
                    rows: view.rows(),
                    records: records.len(),
                });
            }
        }
        Ok(Self { records, views })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.duration_s).collect()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.records.iter().map(|r| r.duration_s).sum()
    }
}

/// Lists `*.emb` files in a directory, sorted by name.
pub fn list_view_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == VIEW_EXT) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads a corpus directory: `manifest.jsonl` plus one `<view>.emb` per view.
pub fn load_corpus(dir: &Path, normalize: bool) -> Result<CorpusManifest> {
    let records = load_manifest(&dir.join(MANIFEST_FILE))?;
    let mut views = ViewSet::new();
    for path in list_view_files(dir)? {
        let view = load_view_normalized(&path, normalize)?;
        views.insert(view.name.clone(), view);
    }
    if views.is_empty() {
        return Err(StoreError::NoViews(dir.to_path_buf()));
    }
    CorpusManifest::new(records, views)
}

pub fn save_corpus(corpus: &CorpusManifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_manifest(&corpus.records, &dir.join(MANIFEST_FILE))?;
    for view in corpus.views.values() {
        save_view(view, &dir.join(format!("{}.{VIEW_EXT}", view.name)))?;
    }
    Ok(())
}

/// One target dataset: per-view rows, plus optional utterance records
/// (only durations are used, and rows need not align with them).
#[derive(Debug, Clone)]
pub struct TargetDataset {
    pub name: String,
    pub views: BTreeMap<String, Matrix>,
    pub records: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone)]
pub struct TargetSet {
    pub datasets: Vec<TargetDataset>,
    pub compacted: bool,
}

pub const COMPACTED_MARKER: &str = "COMPACTED";

impl TargetSet {
    /// Checks that every dataset has a nonempty matrix for each named view.
    pub fn check_views<'a>(&self, views: impl IntoIterator<Item = &'a str> + Clone) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(StoreError::NoTargets(PathBuf::new()));
        }
        for ds in &self.datasets {
            for v in views.clone() {
                match ds.views.get(v) {
                    None => {
                        return Err(StoreError::MissingTargetView {
                            dataset: ds.name.clone(),
                            view: v.to_owned(),
                        })
                    }
                    Some(m) if m.rows() == 0 => {
                        return Err(StoreError::EmptyTargetView {
                            dataset: ds.name.clone(),
                            view: v.to_owned(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn durations(&self) -> Vec<f64> {
        self.datasets
            .iter()
            .flat_map(|d| d.records.iter().map(|r| r.duration_s))
            .collect()
    }
}

/// Loads a targets directory: one subdirectory per dataset, each holding
/// `<view>.emb` files and optionally a `manifest.jsonl`. Datasets are
/// ordered by directory name.
pub fn load_targets(dir: &Path, normalize: bool) -> Result<TargetSet> {
    let mut subdirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.path().is_dir() {
            subdirs.push(entry.path());
        }
    }
    subdirs.sort();
    let mut datasets = Vec::new();
    for sub in subdirs {
        let name = sub
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut views = BTreeMap::new();
        for path in list_view_files(&sub)? {
            let view = load_view_normalized(&path, normalize)?;
            views.insert(view.name, view.matrix);
        }
        let manifest = sub.join(MANIFEST_FILE);
        let records = if manifest.exists() {
            load_manifest(&manifest)?
        } else {
            Vec::new()
        };
        datasets.push(TargetDataset {
            name,
            views,
            records,
        });
    }
    if datasets.is_empty() {
        return Err(StoreError::NoTargets(dir.to_path_buf()));
    }
    let compacted = dir.join(COMPACTED_MARKER).exists();
    Ok(TargetSet {
        datasets,
        compacted,
    })
}

pub fn save_targets(targets: &TargetSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for ds in &targets.datasets {
        let sub = dir.join(&ds.name);
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        for (name, m) in &ds.views {
            let view = EmbeddingView::new(name.clone(), m.clone(), targets.compacted);
            save_view(&view, &sub.join(format!("{name}.{VIEW_EXT}")))?;
        }
        if !ds.records.is_empty() {
            save_manifest(&ds.records, &sub.join(MANIFEST_FILE))?;
        }
    }
    if targets.compacted {
        let marker = dir.join(COMPACTED_MARKER);
        let mut f = fs::File::create(&marker).map_err(io_err(&marker))?;
        f.write_all(b"k-means centroids\n")
            .map_err(io_err(&marker))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(normalized: u8, rows: u64, dims: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(normalized);
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&dims.to_le_bytes());
        b
    }

    fn p() -> &'static Path {
        Path::new("test.emb")
    }

    #[test]
    fn header_arithmetic() {
        let mut b = header(0, 3, 2);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let view = EmbeddingView::from_bytes("x", &b, p()).unwrap();
        assert_eq!(view.rows(), 3);
        assert_eq!(view.dims(), 2);
        assert_eq!(view.row(2), &[5.0, 6.0]);
        assert_eq!(view.to_bytes(), b);
    }

    #[test]
    fn short_payload_is_dimension_mismatch() {
        let mut b = header(0, 3, 2);
        b.extend_from_slice(&[0u8; 20]);
        assert!(matches!(
            EmbeddingView::from_bytes("x", &b, p()),
            Err(StoreError::DimensionMismatch {
                expected: 24,
                actual: 20,
                ..
            })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = header(0, 1, 1);
        b.extend_from_slice(&[0u8; 5]);
        assert!(matches!(
            EmbeddingView::from_bytes("x", &b, p()),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut b = header(0, 0, 1);
        b[0] = b'X';
        assert!(matches!(
            EmbeddingView::from_bytes("x", &b, p()),
            Err(StoreError::BadMagic { .. })
        ));
        assert!(matches!(
            EmbeddingView::from_bytes("x", b"EM", p()),
            Err(StoreError::BadMagic { .. })
        ));
    }

    #[test]
    fn nan_reported_with_position() {
        let mut b = header(0, 3, 2);
        for v in [1.0f32, 2.0, f32::NAN, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            EmbeddingView::from_bytes("x", &b, p()),
            Err(StoreError::NonFiniteEntry { row: 1, col: 0 })
        ));
    }

    #[test]
    fn normalized_flag_is_checked() {
        let mut b = header(1, 1, 2);
        for v in [3.0f32, 4.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            EmbeddingView::from_bytes("x", &b, p()),
            Err(StoreError::NotNormalized { row: 0, .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[[3.0f32, 4.0], [0.0, 0.0], [1.0, 0.0]]);
        let (v, zeros) = EmbeddingView::new("v", m, false).l2_normalize();
        assert_eq!(zeros, 1);
        assert!(v.normalized);
        assert!((v.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((v.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(v.row(1), &[0.0, 0.0]);
        assert_eq!(v.row(2), &[1.0, 0.0]);
    }

    fn manifest(text: &str) -> Result<Vec<UtteranceRecord>> {
        parse_manifest(text, Path::new("m.jsonl"))
    }

    #[test]
    fn manifest_in_file_order() {
        let recs = manifest(
            "{\"id\":\"a\",\"duration_s\":1.5,\"dataset\":\"x\"}\n\
             {\"id\":\"b\",\"duration_s\":2,\"dataset\":\"x\"}\n\
             {\"id\":\"c\",\"duration_s\":0.1,\"dataset\":\"y\"}\n",
        )
        .unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn manifest_duplicate_id() {
        let err = manifest(
            "{\"id\":\"utt-0007\",\"duration_s\":1,\"dataset\":\"x\"}\n\
             {\"id\":\"utt-0007\",\"duration_s\":1,\"dataset\":\"x\"}\n",
        )
        .unwrap_err();
        match err {
            StoreError::DuplicateId { id, line, .. } => {
                assert_eq!(id, "utt-0007");
                assert_eq!(line, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn manifest_zero_duration() {
        assert!(matches!(
            manifest("{\"id\":\"a\",\"duration_s\":0,\"dataset\":\"x\"}"),
            Err(StoreError::NonPositiveDuration { line: 1, .. })
        ));
    }

    #[test]
    fn manifest_malformed_line_number() {
        assert!(matches!(
            manifest("{\"id\":\"a\",\"duration_s\":1,\"dataset\":\"x\"}\nnot json\n"),
            Err(StoreError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn corpus_row_count_cross_check() {
        let recs = manifest("{\"id\":\"a\",\"duration_s\":1,\"dataset\":\"x\"}").unwrap();
        let mut views = ViewSet::new();
        views.insert(
            "v".into(),
            EmbeddingView::new("v", Matrix::zeros(2, 3), false),
        );
        assert!(matches!(
            CorpusManifest::new(recs, views),
            Err(StoreError::RowCountMismatch {
                rows: 2,
                records: 1,
                ..
            })
        ));
    }
}
