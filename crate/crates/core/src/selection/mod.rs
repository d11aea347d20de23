//! Duration-budgeted subset selectors.
//!
//! * [`greedy_mmr_exact`]: one pick at a time over the whole corpus.
//! * [`batched_mmr`]: relevance prefilter, then rounds that commit the top
//!   `B` candidates by MMR score, with diversity measured only against
//!   picks committed in earlier rounds.
//! * [`random_baseline`] and [`duration_baseline`].
//!
//! Every selector stops once the cumulative duration of its picks reaches
//! the budget `T = alpha * total source duration`.

mod baseline;
mod mmr;

pub use baseline::{duration_baseline, quantile_edges, random_baseline, DEFAULT_DURATION_BINS};
pub use mmr::{batched_mmr, batched_mmr_scored, greedy_mmr_exact};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relevance::{AggregationMode, FusionWeights, RelevanceError};
use crate::store::{StoreError, UtteranceRecord};

pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_PREFILTER: f64 = 0.15;
pub const DEFAULT_BATCH: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no target rows")]
    EmptyTargets,
    #[error("target durations are empty")]
    EmptyTargetDurations,
    #[error("{name} = {value} is out of range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("{0} durations but {1} candidates")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error("{0}")]
    Store(String),
}

impl From<StoreError> for SelectionError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NoTargets(_)
            | StoreError::MissingTargetView { .. }
            | StoreError::EmptyTargetView { .. } => SelectionError::EmptyTargets,
            other => SelectionError::Store(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, SelectionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub lambda: f64,
    pub subset_fraction: f64,
    pub prefilter_fraction: f64,
    pub batch_size: usize,
    pub weights: FusionWeights,
    pub aggregation: AggregationMode,
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(weights: FusionWeights, subset_fraction: f64) -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            subset_fraction,
            prefilter_fraction: DEFAULT_PREFILTER,
            batch_size: DEFAULT_BATCH,
            weights,
            aggregation: AggregationMode::Max,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_closed("lambda", self.lambda)?;
        check_fraction("subset_fraction", self.subset_fraction)?;
        check_fraction("prefilter_fraction", self.prefilter_fraction)?;
        if self.batch_size == 0 {
            return Err(SelectionError::OutOfRange {
                name: "batch_size",
                value: 0.0,
                range: ">= 1",
            });
        }
        Ok(())
    }
}

pub(crate) fn check_unit_closed(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SelectionError::OutOfRange {
            name,
            value,
            range: "[0, 1]",
        })
    }
}

pub(crate) fn check_fraction(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(SelectionError::OutOfRange {
            name,
            value,
            range: "(0, 1]",
        })
    }
}

/// `T = alpha * sum(d)`, summed in index order.
pub fn duration_budget(durations: &[f64], alpha: f64) -> f64 {
    alpha * durations.iter().sum::<f64>()
}

/// `ceil(rho * n)`, at least 1 and at most `n`. A 1e-9 slack absorbs
/// representation error such as `0.15 * 1000 = 150.00000000000003`.
pub fn prefilter_size(n: usize, rho: f64) -> usize {
    let raw = rho * n as f64;
    ((raw - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub rank: usize,
    pub index: usize,
    pub relevance: f64,
    pub diversity: f64,
    pub mmr: f64,
    pub cumulative_duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mmr,
    Exact,
    Random,
    Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    pub picks: Vec<Pick>,
    pub budget_s: f64,
    pub total_selected_s: f64,
    pub pool_size: usize,
    pub rounds: usize,
    /// True when the candidate pool ran out before the budget was met.
    pub exhausted: bool,
}

impl SelectionResult {
    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }
}

/// Accumulates picks with running duration.
pub(crate) struct PickLog<'a> {
    durations: &'a [f64],
    pub picks: Vec<Pick>,
    pub total: f64,
}

impl<'a> PickLog<'a> {
    pub fn new(durations: &'a [f64]) -> Self {
        Self {
            durations,
            picks: Vec::new(),
            total: 0.0,
        }
    }

    pub fn push(&mut self, index: usize, relevance: f64, diversity: f64, mmr: f64) {
        self.total += self.durations[index];
        self.picks.push(Pick {
            rank: self.picks.len(),
            index,
            relevance,
            diversity,
            mmr,
            cumulative_duration_s: self.total,
        });
    }
}

#[derive(Serialize)]
struct PickLine<'a> {
    rank: usize,
    id: &'a str,
    relevance: f64,
    diversity: f64,
    mmr: f64,
    cumulative_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub method: Method,
    pub budget_s: f64,
    pub total_selected_s: f64,
    pub pool_size: usize,
    pub rounds: usize,
    pub exhausted: bool,
    pub picks: usize,
}

#[derive(Serialize, Deserialize)]
struct FooterLine {
    footer: Footer,
}

/// One JSON object per pick, in pick order, then a footer line.
pub fn to_jsonl(result: &SelectionResult, records: &[UtteranceRecord]) -> String {
    let mut out = String::new();
    for p in &result.picks {
        let line = PickLine {
            rank: p.rank,
            id: &records[p.index].id,
            relevance: p.relevance,
            diversity: p.diversity,
            mmr: p.mmr,
            cumulative_duration_s: p.cumulative_duration_s,
        };
        out.push_str(&serde_json::to_string(&line).expect("pick serializes"));
        out.push('\n');
    }
    let footer = FooterLine {
        footer: Footer {
            method: result.method,
            budget_s: result.budget_s,
            total_selected_s: result.total_selected_s,
            pool_size: result.pool_size,
            rounds: result.rounds,
            exhausted: result.exhausted,
            picks: result.picks.len(),
        },
    };
    out.push_str(&serde_json::to_string(&footer).expect("footer serializes"));
    out.push('\n');
    out
}

/// Reads back the pick ids and footer of a selection file.
pub fn parse_jsonl(text: &str) -> std::result::Result<(Vec<String>, Footer), String> {
    #[derive(Deserialize)]
    struct IdOnly {
        id: String,
    }
    let mut ids = Vec::new();
    let mut footer = None;
    for (i, line) in text.lines().enumerate() {
        if let Ok(f) = serde_json::from_str::<FooterLine>(line) {
            footer = Some(f.footer);
            continue;
        }
        let rec: IdOnly = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        ids.push(rec.id);
    }
    Ok((ids, footer.ok_or("missing footer line")?))
}
