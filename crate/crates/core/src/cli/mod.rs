//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on data errors (bad or missing input files),
//! 2 on usage errors. Every numeric option is range-checked while parsing,
//! before any file is read. Output files are written to a temporary file and
//! renamed into place.

mod run_manifest;

pub use run_manifest::{digest_file, sha256_hex, sidecar_path, FileDigest, RunManifest};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixture::{self, FixtureSpec};
use crate::kmeans::{compact_targets, format_report, KMeansConfig};
use crate::probe::{format_table, probe_matrix, ProbeConfig};
use crate::projection::{audit_cosine_preservation, make_projection, project_view, ProjectionSpec};
use crate::relevance::{AggregationMode, FusionWeights};
use crate::selection::{
    batched_mmr, duration_baseline, random_baseline, to_jsonl, SelectionConfig,
};
use crate::store::{
    self, list_view_files, load_manifest, load_view, save_targets, save_view, StoreError,
    MANIFEST_FILE,
};
use run_manifest::Timer;

pub const THREADS_ENV: &str = "SPEECHSEL_THREADS";
pub const REPORT_FILE: &str = "compaction_report.txt";
pub const COMPACT_MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "speechsel",
    version,
    about = "Target-aware subset selection over speech embedding views"
)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true, env = THREADS_ENV, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gaussian random projection of an embedding file.
    Project(ProjectArgs),
    /// Pairwise-cosine correlation between a view and its projection.
    Audit(AuditArgs),
    /// Replace target embeddings by k-means centroids.
    CompactTargets(CompactArgs),
    /// Select a duration-budgeted subset of the corpus.
    Select(SelectArgs),
    /// Cross-view predictability table.
    Probe(ProbeArgs),
    /// Corpus summary, or write a synthetic fixture.
    Stats(StatsArgs),
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be in [0, 1], got {v}"))
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("must be in (0, 1], got {v}"))
    }
}

fn open_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must be in (0, 1), got {v}"))
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite value >= 0, got {v}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite value > 0, got {v}"))
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err("must be >= 1".into())
    }
}

fn weights(s: &str) -> Result<FusionWeights, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProjectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256, value_parser = positive_usize)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub hi: PathBuf,
    #[arg(long)]
    pub lo: PathBuf,
    #[arg(long, default_value_t = 100_000, value_parser = positive_usize)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompactArgs {
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = positive_usize)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4, value_parser = nonnegative)]
    pub tol: f64,
    /// Reserved: represent targets by their nearest real rows.
    #[arg(long, hide = true)]
    pub medoids: bool,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Mmr,
    Random,
    Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateArg {
    Max,
    Mean,
}

impl From<AggregateArg> for AggregationMode {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Max => AggregationMode::Max,
            AggregateArg::Mean => AggregationMode::Mean,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    #[arg(long, required_unless_present = "replay")]
    pub corpus: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub targets: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Mmr)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.7, value_parser = unit_interval)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.05, value_parser = fraction)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.15, value_parser = fraction)]
    pub rho: f64,
    #[arg(long, default_value_t = 1024, value_parser = positive_usize)]
    pub batch: usize,
    /// `view=w,...`; default uniform over the corpus views.
    #[arg(long, value_parser = weights)]
    pub weights: Option<FusionWeights>,
    #[arg(long, value_enum, default_value_t = AggregateArg::Max)]
    pub aggregate: AggregateArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quantile bins for `--method duration`.
    #[arg(long, default_value_t = 20, value_parser = positive_usize)]
    pub bins: usize,
    /// Use embeddings as stored instead of L2-normalizing at load.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, required_unless_present = "replay")]
    pub out: Option<PathBuf>,
    /// Re-run the selection recorded in a run manifest.
    #[arg(long, conflicts_with_all = ["corpus", "targets"])]
    #[serde(skip)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated view names; default all views.
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<String>,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8, value_parser = open_fraction)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1e-4, value_parser = nonnegative)]
    pub l2: f64,
    #[arg(long, default_value_t = 200, value_parser = positive_usize)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    pub learning_rate: f64,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    #[arg(long, required_unless_present = "make_fixture")]
    pub corpus: Option<PathBuf>,
    /// Write a synthetic corpus and targets under this directory.
    #[arg(long, conflicts_with = "corpus")]
    pub make_fixture: Option<PathBuf>,
    #[arg(long, default_value_t = 2000, value_parser = positive_usize)]
    pub fixture_size: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing its report to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(usize::from(t));
    }
    let pool = builder.build().map_err(data)?;
    let threads = pool.current_num_threads();
    let mut text = String::new();
    pool.install(|| match cli.command {
        Command::Project(a) => cmd_project(&a, threads),
        Command::Audit(a) => cmd_audit(&a, &mut text),
        Command::CompactTargets(a) => cmd_compact(&a, threads, &mut text),
        Command::Select(a) => cmd_select(a, threads, &mut text),
        Command::Probe(a) => cmd_probe(&a, &mut text),
        Command::Stats(a) => cmd_stats(&a, &mut text),
    })?;
    stdout.write_all(text.as_bytes()).map_err(data)?;
    Ok(())
}

fn config_value<T: Serialize>(args: &T, threads: usize) -> serde_json::Value {
    let mut v = serde_json::to_value(args).expect("args serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.insert("threads".into(), threads.into());
    }
    v
}

fn cmd_project(a: &ProjectArgs, threads: usize) -> Result<(), CliError> {
    let mut timer = Timer::new();
    timer.start("load");
    let view = load_view(&a.input)?;
    let spec = ProjectionSpec::new(view.dims(), a.dim, a.seed)
        .map_err(|e| CliError::Usage(format!("--dim: {e}")))?;
    timer.start("project");
    let proj = make_projection(spec).map_err(data)?;
    let out = project_view(&view, &proj).map_err(data)?;
    timer.start("write");
    save_view(&out, &a.out)?;
    let mut manifest = RunManifest::new("project", config_value(a, threads));
    manifest.add_inputs(std::slice::from_ref(&a.input))?;
    manifest.add_output(&a.out)?;
    manifest.phases = timer.finish();
    manifest.write(&sidecar_path(&a.out))
}

fn cmd_audit(a: &AuditArgs, out: &mut String) -> Result<(), CliError> {
    let hi = load_view(&a.hi)?;
    let lo = load_view(&a.lo)?;
    let r = audit_cosine_preservation(&hi, &lo, a.pairs, a.seed).map_err(data)?;
    writeln!(out, "{r:.6}").unwrap();
    Ok(())
}

/// Files a target directory load reads, in load order.
fn target_inputs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        files.extend(list_view_files(&sub)?);
        let m = sub.join(MANIFEST_FILE);
        if m.exists() {
            files.push(m);
        }
    }
    Ok(files)
}

fn corpus_inputs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = vec![dir.join(MANIFEST_FILE)];
    files.extend(list_view_files(dir)?);
    Ok(files)
}

fn cmd_compact(a: &CompactArgs, threads: usize, out: &mut String) -> Result<(), CliError> {
    if a.medoids {
        return Err(CliError::Usage(
            "--medoids is reserved and not supported yet".into(),
        ));
    }
    let mut timer = Timer::new();
    timer.start("load");
    let targets = store::load_targets(&a.targets, !a.no_normalize)?;
    timer.start("kmeans");
    let cfg = KMeansConfig {
        k: a.k,
        max_iters: a.max_iters,
        tol: a.tol,
        seed: a.seed,
    };
    let (compacted, report) = compact_targets(&targets, &cfg).map_err(data)?;
    timer.start("write");
    save_targets(&compacted, &a.out)?;
    let report_text = format_report(&report);
    let report_path = a.out.join(REPORT_FILE);
    crate::atomic::write(&report_path, report_text.as_bytes())
        .map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?;
    out.push_str(&report_text);

    let mut manifest = RunManifest::new("compact-targets", config_value(a, threads));
    manifest.add_inputs(&target_inputs(&a.targets)?)?;
    for f in target_inputs(&a.out)? {
        manifest.add_output(&f)?;
    }
    manifest.add_output(&report_path)?;
    manifest.phases = timer.finish();
    manifest.write(&a.out.join(COMPACT_MANIFEST_FILE))
}

fn cmd_select(mut a: SelectArgs, threads: usize, out: &mut String) -> Result<(), CliError> {
    if let Some(replay) = a.replay.take() {
        let recorded = RunManifest::read(&replay)?;
        if recorded.command != "select" {
            return Err(CliError::Data(format!(
                "{}: not a select run manifest",
                replay.display()
            )));
        }
        recorded.verify_inputs()?;
        let mut cfg: SelectArgs = serde_json::from_value(recorded.config.clone())
            .map_err(|e| CliError::Data(format!("{}: {e}", replay.display())))?;
        if a.out.is_some() {
            cfg.out = a.out;
        }
        a = cfg;
    }
    let (Some(corpus_dir), Some(targets_dir), Some(out_path)) =
        (a.corpus.clone(), a.targets.clone(), a.out.clone())
    else {
        return Err(CliError::Usage(
            "--corpus, --targets and --out are required".into(),
        ));
    };

    let mut timer = Timer::new();
    timer.start("load");
    let corpus = store::load_corpus(&corpus_dir, !a.no_normalize)?;
    let targets = store::load_targets(&targets_dir, !a.no_normalize)?;
    let weights = match &a.weights {
        Some(w) => w.clone(),
        None => FusionWeights::uniform(corpus.views.keys().cloned()).map_err(data)?,
    };
    for name in weights.names() {
        if !corpus.views.contains_key(name) {
            return Err(CliError::Data(format!(
                "--weights names view {name:?}, which {} does not contain",
                corpus_dir.display()
            )));
        }
    }
    a.weights = Some(weights.clone());
    let cfg = SelectionConfig {
        lambda: a.lambda,
        subset_fraction: a.alpha,
        prefilter_fraction: a.rho,
        batch_size: a.batch,
        weights,
        aggregation: a.aggregate.into(),
        seed: a.seed,
    };

    timer.start("select");
    let result = match a.method {
        MethodArg::Mmr => batched_mmr(&corpus, &targets, &cfg).map_err(data)?,
        MethodArg::Random => random_baseline(&corpus.durations(), a.alpha, a.seed).map_err(data)?,
        MethodArg::Duration => {
            let target_durations = targets.durations();
            if target_durations.is_empty() {
                return Err(CliError::Data(format!(
                    "{}: no target {MANIFEST_FILE} with durations",
                    targets_dir.display()
                )));
            }
            duration_baseline(
                &corpus.durations(),
                &target_durations,
                a.alpha,
                a.seed,
                a.bins,
            )
            .map_err(data)?
        }
    };
    timer.start("write");
    let text = to_jsonl(&result, &corpus.records);
    crate::atomic::write(&out_path, text.as_bytes())
        .map_err(|e| CliError::Data(format!("{}: {e}", out_path.display())))?;

    let mut manifest = RunManifest::new("select", config_value(&a, threads));
    manifest.add_inputs(&corpus_inputs(&corpus_dir)?)?;
    manifest.add_inputs(&target_inputs(&targets_dir)?)?;
    manifest.add_output(&out_path)?;
    manifest.phases = timer.finish();
    manifest.write(&sidecar_path(&out_path))?;

    writeln!(
        out,
        "selected {} utterances, {:.1} s of budget {:.1} s (pool {}, rounds {}{})",
        result.picks.len(),
        result.total_selected_s,
        result.budget_s,
        result.pool_size,
        result.rounds,
        if result.exhausted {
            ", pool exhausted"
        } else {
            ""
        }
    )
    .unwrap();
    Ok(())
}

fn cmd_probe(a: &ProbeArgs, out: &mut String) -> Result<(), CliError> {
    let corpus = store::load_corpus(&a.corpus, !a.no_normalize)?;
    let mut views = corpus.views;
    if !a.views.is_empty() {
        for v in &a.views {
            if !views.contains_key(v) {
                return Err(CliError::Data(format!(
                    "view {v:?} not found in {}",
                    a.corpus.display()
                )));
            }
        }
        views.retain(|k, _| a.views.contains(k));
    }
    let cfg = ProbeConfig {
        clusters: a.clusters,
        train_fraction: a.train_fraction,
        l2_penalty: a.l2,
        max_epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
    };
    let reports = probe_matrix(&views, &cfg).map_err(data)?;
    out.push_str(&format_table(&reports));
    Ok(())
}

fn cmd_stats(a: &StatsArgs, out: &mut String) -> Result<(), CliError> {
    if let Some(dir) = &a.make_fixture {
        let spec = FixtureSpec {
            utterances: a.fixture_size,
            seed: a.seed,
            ..FixtureSpec::default()
        };
        let fx = fixture::generate(&spec);
        fixture::write(&fx, dir)?;
        writeln!(
            out,
            "wrote {} utterances to {} and {} target datasets to {}",
            fx.corpus.len(),
            dir.join("corpus").display(),
            fx.targets.datasets.len(),
            dir.join("targets").display()
        )
        .unwrap();
        return Ok(());
    }
    let dir = a.corpus.as_ref().expect("clap enforces --corpus");
    let records = load_manifest(&dir.join(MANIFEST_FILE))?;
    let total: f64 = records.iter().map(|r| r.duration_s).sum();
    writeln!(out, "utterances: {}", records.len()).unwrap();
    writeln!(out, "total_hours: {:.3}", total / 3600.0).unwrap();
    let mut per: std::collections::BTreeMap<&str, (usize, f64)> = Default::default();
    for r in &records {
        let e = per.entry(r.dataset.as_str()).or_default();
        e.0 += 1;
        e.1 += r.duration_s;
    }
    for (name, (n, secs)) in per {
        writeln!(
            out,
            "dataset {name}: {n} utterances, {:.3} h",
            secs / 3600.0
        )
        .unwrap();
    }
    for path in list_view_files(dir)? {
        let view = load_view(&path)?;
        if view.rows() != records.len() {
            return Err(StoreError::RowCountMismatch {
                rows: view.rows(),
                view: view.name,
                records: records.len(),
            }
            .into());
        }
        writeln!(out, "view {}: {} dims", view.name, view.dims()).unwrap();
    }
    Ok(())
}
