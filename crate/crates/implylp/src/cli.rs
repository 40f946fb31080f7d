//! Command-line front end.
//!
//! Five subcommands: `verify` decides region implication for a sample
//! set, `sweep` repeats it across radii, `compare` quantifies the
//! shared-input tightening against independent per-network analysis,
//! `compact` prunes or quantizes a network file, and `audit` runs the
//! randomized property suites and writes a machine-readable report.
//!
//! Every command is deterministic given its configuration (plus seed for
//! `audit`), never mutates its input files, and exits 0 on a completed
//! run, 2 on a bad configuration, 3 on a load or write failure, 4 on a
//! solver hard failure, and 5 when the audit finds a violated property.
//! Flags can also come from a JSON config file (same keys); flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::InputRegion;
use crate::compaction::{parameter_stats, prune_mbp_scoped, quantize, PruneScope, QuantScheme};
use crate::ingest::{load_network, load_samples, save_network, Sample};
use crate::model::{check_compatible, log_rpr, ClassPair, Layer, Network};
use crate::oracle::{make_fixture, sample_extrema, FixtureKind, SplitMix64};
use crate::relax::{BuildOptions, ProblemVariant};
use crate::verify::{
    bound_pair, chain_transitivity, compare_independent, verify_implication, BoundMethod,
    BoundOptions, ChainReport, ImplicationReport, IndependentComparison, VerifyOptions,
};
use crate::{Error, Result};

const JOBS_ENV: &str = "IMPLYLP_JOBS";

/// Parse the process arguments, run the selected command, and return the
/// process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let env_jobs = std::env::var(JOBS_ENV).ok();
    match dispatch(cli, env_jobs) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(cli: Cli, env_jobs: Option<String>) -> Result<i32> {
    match cli.command {
        Command::Verify(args) => cmd_verify(resolve_run(&args, DeltaArity::ExactlyOne, env_jobs)?),
        Command::Sweep(args) => cmd_sweep(resolve_run(&args, DeltaArity::TwoOrMore, env_jobs)?),
        Command::Compare(args) => cmd_compare(resolve_compare(&args, env_jobs)?),
        Command::Compact(args) => cmd_compact(resolve_compact(&args)?),
        Command::Audit(args) => cmd_audit(resolve_audit(&args, env_jobs)?),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Shape(_)
        | Error::Incompatible(_)
        | Error::ClassPair(_)
        | Error::Region(_)
        | Error::Oracle(_) => 2,
        Error::Load { .. } | Error::Save { .. } | Error::Validation { .. } | Error::Io(_) => 3,
        Error::Solver(_) | Error::Numeric(_) => 4,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "implylp",
    version,
    about = "Certified implication bounds between compatible classifiers over box regions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide whether one network's correct decisions imply the other's
    /// over a box around each sample.
    Verify(RunArgs),
    /// Run verify across several radii and report the per-radius trend.
    Sweep(RunArgs),
    /// Quantify how much the shared-input analysis tightens the bound
    /// sandwich versus analyzing each network independently.
    Compare(CompareArgs),
    /// Prune or quantize a network file.
    Compact(CompactArgs),
    /// Run the randomized property audits and write a deterministic,
    /// machine-readable report.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    /// Bound the margin difference over the whole region.
    Margin,
    /// Bound the first network's margin only where the second wins.
    Pure,
}

impl VariantArg {
    fn to_domain(self) -> ProblemVariant {
        match self {
            VariantArg::Margin => ProblemVariant::JointMargin,
            VariantArg::Pure => ProblemVariant::JointPureImplication,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundsArg {
    /// Interval propagation only.
    Interval,
    /// Interval propagation tightened by per-neuron LP solves.
    Lp,
}

impl BoundsArg {
    fn to_domain(self) -> BoundMethod {
        match self {
            BoundsArg::Interval => BoundMethod::Interval,
            BoundsArg::Lp => BoundMethod::LpRefined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Both,
}

impl FormatArg {
    fn json(self) -> bool {
        matches!(self, FormatArg::Json | FormatArg::Both)
    }
    fn csv(self) -> bool {
        matches!(self, FormatArg::Csv | FormatArg::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    /// One threshold from the layer's weights and bias together.
    Joint,
    /// Separate thresholds for the weight and bias tensors.
    PerTensor,
}

impl ScopeArg {
    fn to_domain(self) -> PruneScope {
        match self {
            ScopeArg::Joint => PruneScope::JointMax,
            ScopeArg::PerTensor => PruneScope::PerTensorMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QuantArg {
    Float16,
    Int16,
    Int8,
    Int4,
}

impl QuantArg {
    fn to_domain(self) -> QuantScheme {
        match self {
            QuantArg::Float16 => QuantScheme::Float16,
            QuantArg::Int16 => QuantScheme::Int16,
            QuantArg::Int8 => QuantScheme::Int8,
            QuantArg::Int4 => QuantScheme::Int4,
        }
    }
}

#[derive(Debug, Default, Args)]
struct RunArgs {
    /// Network whose correctness is to be implied (the one under scrutiny).
    #[arg(long)]
    net1: Option<PathBuf>,
    /// Network whose correctness does the implying (the reference).
    #[arg(long)]
    net2: Option<PathBuf>,
    /// Sample file with region centers and labels.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Region radius around each sample; repeat the flag to sweep.
    #[arg(long = "delta", value_name = "DELTA")]
    deltas: Vec<f64>,
    /// Lower bounds must reach this value for an implication to count.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    bounds: Option<BoundsArg>,
    /// Worker threads; IMPLYLP_JOBS is the fallback, all cores the default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for the report files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Analyze samples whose center a network misclassifies instead of
    /// skipping them.
    #[arg(long)]
    allow_misclassified: bool,
    /// JSON config carrying the same keys as the flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
struct CompareArgs {
    #[arg(long)]
    net1: Option<PathBuf>,
    #[arg(long)]
    net2: Option<PathBuf>,
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Region radius around each sample.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    bounds: Option<BoundsArg>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
struct CompactArgs {
    /// Network file to compact.
    #[arg(long)]
    net1: Option<PathBuf>,
    /// Path for the compacted network file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero parameters below this fraction of the layer maximum magnitude.
    #[arg(long)]
    prune: Option<f64>,
    #[arg(long, value_enum)]
    prune_scope: Option<ScopeArg>,
    /// Round parameters through a lower-precision grid.
    #[arg(long, value_enum)]
    quantize: Option<QuantArg>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
struct AuditArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Randomized instances per property suite.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Negative control: encode unstable activations as if they were
    /// always active, which is unsound; the audit must catch it.
    #[arg(long)]
    inject_unsound_relu: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// `delta` in a config file: a single radius or a list.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DeltaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl DeltaSpec {
    fn into_vec(self) -> Vec<f64> {
        match self {
            DeltaSpec::One(d) => vec![d],
            DeltaSpec::Many(v) => v,
        }
    }
}

/// Config-file mirror of the flags. Unknown keys are rejected so typos
/// fail loudly instead of silently running with defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    net1: Option<PathBuf>,
    net2: Option<PathBuf>,
    samples: Option<PathBuf>,
    delta: Option<DeltaSpec>,
    threshold: Option<f64>,
    variant: Option<String>,
    bounds: Option<String>,
    jobs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<String>,
    allow_misclassified: Option<bool>,
    prune: Option<f64>,
    prune_scope: Option<String>,
    quantize: Option<String>,
    trials: Option<usize>,
    inject_unsound_relu: Option<bool>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("malformed config {}: {e}", path.display())))
}

/// Parse a `ValueEnum` spelled as a config-file string, accumulating a
/// problem instead of failing fast.
fn parse_enum<T: ValueEnum>(
    value: Option<&str>,
    key: &str,
    problems: &mut Vec<String>,
) -> Option<T> {
    let value = value?;
    match T::from_str(value, true) {
        Ok(v) => Some(v),
        Err(_) => {
            problems.push(format!("config key `{key}` has unknown value `{value}`"));
            None
        }
    }
}

fn resolve_jobs(
    flag: Option<usize>,
    env: Option<&str>,
    file: Option<usize>,
    problems: &mut Vec<String>,
) -> Option<usize> {
    let env_jobs = env.and_then(|text| match text.trim().parse::<usize>() {
        Ok(n) => Some(n),
        Err(_) => {
            problems.push(format!("{JOBS_ENV} must be a positive integer, got `{text}`"));
            None
        }
    });
    let jobs = flag.or(env_jobs).or(file);
    if jobs == Some(0) {
        problems.push("jobs must be at least 1".into());
        return None;
    }
    jobs
}

fn require(
    what: &str,
    flag: Option<PathBuf>,
    file: Option<PathBuf>,
    problems: &mut Vec<String>,
) -> PathBuf {
    flag.or(file).unwrap_or_else(|| {
        problems.push(format!("{what} is required"));
        PathBuf::new()
    })
}

fn check_deltas(deltas: &mut Vec<f64>, arity: DeltaArity, problems: &mut Vec<String>) {
    if deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
        problems.push("every delta must be finite and non-negative".into());
        return;
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).expect("finite deltas compare"));
    deltas.dedup();
    match arity {
        DeltaArity::ExactlyOne if deltas.is_empty() => {
            problems.push("--delta is required".into());
        }
        DeltaArity::ExactlyOne if deltas.len() > 1 => {
            problems.push("this command takes a single delta; use `sweep` for several".into());
        }
        DeltaArity::TwoOrMore if deltas.len() < 2 => {
            problems.push("a sweep needs at least two distinct deltas".into());
        }
        _ => {}
    }
}

fn finish(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeltaArity {
    ExactlyOne,
    TwoOrMore,
}

#[derive(Debug)]
struct RunConfig {
    net1: PathBuf,
    net2: PathBuf,
    samples: PathBuf,
    deltas: Vec<f64>,
    threshold: f64,
    variant: ProblemVariant,
    bounds: BoundMethod,
    jobs: Option<usize>,
    out: PathBuf,
    format: FormatArg,
    allow_misclassified: bool,
}

fn resolve_run(args: &RunArgs, arity: DeltaArity, env_jobs: Option<String>) -> Result<RunConfig> {
    let file = load_file_config(args.config.as_deref())?;
    let mut problems = Vec::new();

    let net1 = require("--net1", args.net1.clone(), file.net1, &mut problems);
    let net2 = require("--net2", args.net2.clone(), file.net2, &mut problems);
    let samples = require("--samples", args.samples.clone(), file.samples, &mut problems);
    let mut deltas = if args.deltas.is_empty() {
        file.delta.map(DeltaSpec::into_vec).unwrap_or_default()
    } else {
        args.deltas.clone()
    };
    check_deltas(&mut deltas, arity, &mut problems);

    let threshold = args.threshold.or(file.threshold).unwrap_or(0.0);
    if !threshold.is_finite() {
        problems.push("threshold must be finite".into());
    }
    let variant = args
        .variant
        .or(parse_enum(file.variant.as_deref(), "variant", &mut problems))
        .unwrap_or(VariantArg::Margin);
    let bounds = args
        .bounds
        .or(parse_enum(file.bounds.as_deref(), "bounds", &mut problems))
        .unwrap_or(BoundsArg::Interval);
    let format = args
        .format
        .or(parse_enum(file.format.as_deref(), "format", &mut problems))
        .unwrap_or(FormatArg::Both);
    let jobs = resolve_jobs(args.jobs, env_jobs.as_deref(), file.jobs, &mut problems);
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("."));
    let allow_misclassified =
        args.allow_misclassified || file.allow_misclassified.unwrap_or(false);

    finish(problems)?;
    Ok(RunConfig {
        net1,
        net2,
        samples,
        deltas,
        threshold,
        variant: variant.to_domain(),
        bounds: bounds.to_domain(),
        jobs,
        out,
        format,
        allow_misclassified,
    })
}

#[derive(Debug)]
struct CompareConfig {
    net1: PathBuf,
    net2: PathBuf,
    samples: PathBuf,
    delta: f64,
    bounds: BoundMethod,
    jobs: Option<usize>,
    out: PathBuf,
    format: FormatArg,
}

fn resolve_compare(args: &CompareArgs, env_jobs: Option<String>) -> Result<CompareConfig> {
    let file = load_file_config(args.config.as_deref())?;
    let mut problems = Vec::new();

    let net1 = require("--net1", args.net1.clone(), file.net1, &mut problems);
    let net2 = require("--net2", args.net2.clone(), file.net2, &mut problems);
    let samples = require("--samples", args.samples.clone(), file.samples, &mut problems);
    let mut deltas = match (args.delta, file.delta) {
        (Some(d), _) => vec![d],
        (None, Some(spec)) => spec.into_vec(),
        (None, None) => Vec::new(),
    };
    check_deltas(&mut deltas, DeltaArity::ExactlyOne, &mut problems);
    let bounds = args
        .bounds
        .or(parse_enum(file.bounds.as_deref(), "bounds", &mut problems))
        .unwrap_or(BoundsArg::Interval);
    let format = args
        .format
        .or(parse_enum(file.format.as_deref(), "format", &mut problems))
        .unwrap_or(FormatArg::Both);
    let jobs = resolve_jobs(args.jobs, env_jobs.as_deref(), file.jobs, &mut problems);
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("."));

    finish(problems)?;
    Ok(CompareConfig {
        net1,
        net2,
        samples,
        delta: deltas[0],
        bounds: bounds.to_domain(),
        jobs,
        out,
        format,
    })
}

#[derive(Debug)]
enum CompactScheme {
    Prune { fraction: f64, scope: PruneScope },
    Quantize(QuantScheme),
}

#[derive(Debug)]
struct CompactConfig {
    net1: PathBuf,
    out: PathBuf,
    scheme: CompactScheme,
}

fn resolve_compact(args: &CompactArgs) -> Result<CompactConfig> {
    let file = load_file_config(args.config.as_deref())?;
    let mut problems = Vec::new();

    let net1 = require("--net1", args.net1.clone(), file.net1, &mut problems);
    let out = require("--out", args.out.clone(), file.out, &mut problems);
    let prune = args.prune.or(file.prune);
    let quant = args
        .quantize
        .or(parse_enum(file.quantize.as_deref(), "quantize", &mut problems));
    let scope = args
        .prune_scope
        .or(parse_enum(file.prune_scope.as_deref(), "prune_scope", &mut problems))
        .unwrap_or(ScopeArg::Joint);

    let scheme = match (prune, quant) {
        (Some(fraction), None) => {
            if !(0.0..=1.0).contains(&fraction) {
                problems.push(format!("prune fraction must be in [0, 1], got {fraction}"));
            }
            CompactScheme::Prune {
                fraction,
                scope: scope.to_domain(),
            }
        }
        (None, Some(q)) => CompactScheme::Quantize(q.to_domain()),
        (Some(_), Some(_)) => {
            problems.push("give either --prune or --quantize, not both".into());
            CompactScheme::Quantize(QuantScheme::Float16)
        }
        (None, None) => {
            problems.push("one of --prune or --quantize is required".into());
            CompactScheme::Quantize(QuantScheme::Float16)
        }
    };

    finish(problems)?;
    Ok(CompactConfig { net1, out, scheme })
}

#[derive(Debug)]
struct AuditConfig {
    seed: u64,
    trials: usize,
    jobs: Option<usize>,
    out: PathBuf,
    inject_unsound_relu: bool,
}

fn resolve_audit(args: &AuditArgs, env_jobs: Option<String>) -> Result<AuditConfig> {
    let file = load_file_config(args.config.as_deref())?;
    let mut problems = Vec::new();

    let seed = args.seed.or(file.seed).unwrap_or(0);
    let trials = args.trials.or(file.trials).unwrap_or(100);
    if trials == 0 {
        problems.push("trials must be at least 1".into());
    }
    let jobs = resolve_jobs(args.jobs, env_jobs.as_deref(), file.jobs, &mut problems);
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("."));
    let inject_unsound_relu =
        args.inject_unsound_relu || file.inject_unsound_relu.unwrap_or(false);

    finish(problems)?;
    Ok(AuditConfig {
        seed,
        trials,
        jobs,
        out,
        inject_unsound_relu,
    })
}

fn worker_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

fn save_error(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Save {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| save_error(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| save_error(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| save_error(path, e))?;
    writer.write_record(header).map_err(|e| save_error(path, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| save_error(path, e))?;
    }
    writer.flush().map_err(|e| save_error(path, e))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| save_error(dir, e))
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Smallest certified lower bound across a report's class pairs, present
/// only when every pair certified.
fn overall_lower(report: &ImplicationReport) -> Option<f64> {
    report
        .pair_bounds
        .iter()
        .map(|p| p.lower)
        .collect::<Option<Vec<_>>>()?
        .into_iter()
        .reduce(f64::min)
}

fn overall_upper(report: &ImplicationReport) -> Option<f64> {
    report
        .pair_bounds
        .iter()
        .map(|p| p.upper)
        .collect::<Option<Vec<_>>>()?
        .into_iter()
        .reduce(f64::max)
}

/// Per-direction rollup used by the verify and sweep reports.
#[derive(Debug, Serialize)]
struct DirectionSummary {
    direction: String,
    total: usize,
    implied: usize,
    skipped: usize,
    established_pct: f64,
    reports: Vec<ImplicationReport>,
}

impl DirectionSummary {
    fn new(direction: &str, reports: Vec<ImplicationReport>) -> Self {
        let total = reports.len();
        let implied = reports.iter().filter(|r| r.implied).count();
        let skipped = reports.iter().filter(|r| r.skipped.is_some()).count();
        let established_pct = if total == 0 {
            0.0
        } else {
            implied as f64 / total as f64 * 100.0
        };
        DirectionSummary {
            direction: direction.to_string(),
            total,
            implied,
            skipped,
            established_pct,
        reports,
        }
    }

    fn print_line(&self, label: &str) {
        println!(
            "established {label}: {:.1}% ({}/{} implied, {} skipped)",
            self.established_pct, self.implied, self.total, self.skipped
        );
    }
}

#[derive(Debug, Serialize)]
struct VerifyRunReport {
    net1: String,
    net2: String,
    delta: f64,
    threshold: f64,
    variant: ProblemVariant,
    bound_method: BoundMethod,
    directions: Vec<DirectionSummary>,
}

/// One implication report per sample; samples without labels become
/// skipped reports rather than errors.
fn sample_report(
    net1: &Network,
    net2: &Network,
    sample: &Sample,
    delta: f64,
    opts: &VerifyOptions,
) -> Result<ImplicationReport> {
    match sample.label {
        Some(label) => {
            verify_implication(net1, net2, &sample.id, &sample.values, label, delta, opts)
        }
        None => Ok(ImplicationReport {
            sample_id: sample.id.clone(),
            correct_class: None,
            delta,
            threshold: opts.threshold,
            variant: opts.variant,
            skipped: Some("sample has no ground-truth label".into()),
            pair_bounds: Vec::new(),
            implied: false,
            wall_ms: 0.0,
        }),
    }
}

fn verify_rows(direction: &str, reports: &[ImplicationReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                direction.to_string(),
                r.sample_id.clone(),
                r.delta.to_string(),
                r.implied.to_string(),
                fmt_opt(overall_lower(r)),
                fmt_opt(overall_upper(r)),
                format!("{:.3}", r.wall_ms),
            ]
        })
        .collect()
}

const VERIFY_CSV_HEADER: [&str; 7] = [
    "direction",
    "id",
    "delta",
    "implied",
    "min_lower",
    "max_upper",
    "wall_ms",
];

fn cmd_verify(cfg: RunConfig) -> Result<i32> {
    let net1 = load_network(&cfg.net1)?;
    let net2 = load_network(&cfg.net2)?;
    check_compatible(&net1, &net2)?;
    let samples = load_samples(&cfg.samples)?;
    let delta = cfg.deltas[0];
    let opts = VerifyOptions {
        threshold: cfg.threshold,
        variant: cfg.variant,
        allow_misclassified: cfg.allow_misclassified,
        bound: BoundOptions {
            method: cfg.bounds,
            ..BoundOptions::default()
        },
    };

    let pool = worker_pool(cfg.jobs)?;
    let forward: Result<Vec<_>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| sample_report(&net1, &net2, s, delta, &opts))
            .collect()
    });
    let reverse: Result<Vec<_>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| sample_report(&net2, &net1, s, delta, &opts))
            .collect()
    });

    let forward = DirectionSummary::new("net2_implies_net1", forward?);
    let reverse = DirectionSummary::new("net1_implies_net2", reverse?);
    forward.print_line(&format!("`{}` => `{}`", net2.name, net1.name));
    reverse.print_line(&format!("`{}` => `{}`", net1.name, net2.name));

    ensure_out_dir(&cfg.out)?;
    let mut written = Vec::new();
    if cfg.format.csv() {
        let mut rows = verify_rows(&forward.direction, &forward.reports);
        rows.extend(verify_rows(&reverse.direction, &reverse.reports));
        let path = cfg.out.join("verify_summary.csv");
        write_csv(&path, &VERIFY_CSV_HEADER, &rows)?;
        written.push(path);
    }
    if cfg.format.json() {
        let report = VerifyRunReport {
            net1: net1.name.clone(),
            net2: net2.name.clone(),
            delta,
            threshold: cfg.threshold,
            variant: cfg.variant,
            bound_method: cfg.bounds,
            directions: vec![forward, reverse],
        };
        let path = cfg.out.join("verify_report.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    print_written(&written);
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SweepDeltaRun {
    delta: f64,
    #[serde(flatten)]
    summary: DirectionSummary,
}

#[derive(Debug, Serialize)]
struct SweepRunReport {
    net1: String,
    net2: String,
    direction: String,
    threshold: f64,
    variant: ProblemVariant,
    bound_method: BoundMethod,
    warnings: Vec<String>,
    runs: Vec<SweepDeltaRun>,
}

fn cmd_sweep(cfg: RunConfig) -> Result<i32> {
    let net1 = load_network(&cfg.net1)?;
    let net2 = load_network(&cfg.net2)?;
    check_compatible(&net1, &net2)?;
    let samples = load_samples(&cfg.samples)?;
    let opts = VerifyOptions {
        threshold: cfg.threshold,
        variant: cfg.variant,
        allow_misclassified: cfg.allow_misclassified,
        bound: BoundOptions {
            method: cfg.bounds,
            ..BoundOptions::default()
        },
    };

    let pool = worker_pool(cfg.jobs)?;
    let mut runs = Vec::with_capacity(cfg.deltas.len());
    for &delta in &cfg.deltas {
        let reports: Result<Vec<_>> = pool.install(|| {
            samples
                .par_iter()
                .map(|s| sample_report(&net1, &net2, s, delta, &opts))
                .collect()
        });
        let summary = DirectionSummary::new("net2_implies_net1", reports?);
        summary.print_line(&format!("`{}` => `{}` at delta {delta}", net2.name, net1.name));
        runs.push((delta, summary));
    }

    // Larger radii loosen both the true region and the relaxation, so the
    // implied count should not grow with delta; a rise is worth a look but
    // is not an error (the threshold can sit exactly on a bound).
    let mut warnings = Vec::new();
    for pair in runs.windows(2) {
        let (d0, s0) = (&pair[0].0, &pair[0].1);
        let (d1, s1) = (&pair[1].0, &pair[1].1);
        if s1.implied > s0.implied {
            let w = format!(
                "implied count rose from {} to {} between delta {d0} and {d1}",
                s0.implied, s1.implied
            );
            eprintln!("warning: {w}");
            warnings.push(w);
        }
    }

    ensure_out_dir(&cfg.out)?;
    let mut written = Vec::new();
    if cfg.format.csv() {
        let mut rows = Vec::new();
        for (_, summary) in &runs {
            for r in &summary.reports {
                rows.push(vec![
                    r.sample_id.clone(),
                    r.delta.to_string(),
                    r.implied.to_string(),
                    fmt_opt(overall_lower(r)),
                    fmt_opt(overall_upper(r)),
                    format!("{:.3}", r.wall_ms),
                ]);
            }
        }
        let path = cfg.out.join("sweep.csv");
        write_csv(
            &path,
            &["id", "delta", "implied", "min_lower", "max_upper", "wall_ms"],
            &rows,
        )?;
        written.push(path);
    }
    if cfg.format.json() {
        let report = SweepRunReport {
            net1: net1.name.clone(),
            net2: net2.name.clone(),
            direction: "net2_implies_net1".into(),
            threshold: cfg.threshold,
            variant: cfg.variant,
            bound_method: cfg.bounds,
            warnings,
            runs: runs
                .into_iter()
                .map(|(delta, summary)| SweepDeltaRun { delta, summary })
                .collect(),
        };
        let path = cfg.out.join("sweep.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    print_written(&written);
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SampleComparison {
    sample_id: String,
    #[serde(flatten)]
    comparison: IndependentComparison,
}

#[derive(Debug, Serialize)]
struct CompareRunReport {
    net1: String,
    net2: String,
    delta: f64,
    bound_method: BoundMethod,
    skipped: Vec<String>,
    comparisons: Vec<SampleComparison>,
}

/// The most contested wrong class at the center: the highest logit of
/// `net` among classes other than `label`.
fn runner_up(net: &Network, center: &[f64], label: usize) -> Result<usize> {
    let logits = net.forward(center)?;
    let mut best = None;
    for (j, &v) in logits.iter().enumerate() {
        if j == label {
            continue;
        }
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((j, v));
        }
    }
    Ok(best.expect("at least two classes").0)
}

fn compare_columns(c: &IndependentComparison) -> [f64; 7] {
    [
        c.min_independent,
        c.min_joint,
        c.max_independent,
        c.max_joint,
        c.max_independent - c.min_independent,
        c.max_joint - c.min_joint,
        c.improvement_pct,
    ]
}

const COMPARE_CSV_HEADER: [&str; 8] = [
    "id",
    "min_ind",
    "min_joint",
    "max_ind",
    "max_joint",
    "range_ind",
    "range_joint",
    "improvement_pct",
];

fn cmd_compare(cfg: CompareConfig) -> Result<i32> {
    let net1 = load_network(&cfg.net1)?;
    let net2 = load_network(&cfg.net2)?;
    check_compatible(&net1, &net2)?;
    let samples = load_samples(&cfg.samples)?;
    let opts = BoundOptions {
        method: cfg.bounds,
        ..BoundOptions::default()
    };

    let mut labeled = Vec::new();
    let mut skipped = Vec::new();
    for s in &samples {
        match s.label {
            Some(label) => labeled.push((s, label)),
            None => skipped.push(s.id.clone()),
        }
    }
    if !skipped.is_empty() {
        eprintln!("skipping {} samples without labels", skipped.len());
    }

    let pool = worker_pool(cfg.jobs)?;
    let comparisons: Result<Vec<SampleComparison>> = pool.install(|| {
        labeled
            .par_iter()
            .map(|&(s, label)| {
                let pair = ClassPair::new(label, runner_up(&net1, &s.values, label)?)?;
                let region = InputRegion::new(s.values.clone(), cfg.delta)?;
                let comparison = compare_independent(&net1, &net2, &region, pair, &opts)?;
                Ok(SampleComparison {
                    sample_id: s.id.clone(),
                    comparison,
                })
            })
            .collect()
    });
    let comparisons = comparisons?;

    let table: Vec<[f64; 7]> = comparisons
        .iter()
        .map(|c| compare_columns(&c.comparison))
        .collect();
    let mean = column_means(&table);
    let stddev = column_stddevs(&table, &mean);

    println!(
        "compared {} samples ({} skipped without labels)",
        comparisons.len(),
        skipped.len()
    );
    if !table.is_empty() {
        println!(
            "range improvement from the joint analysis: {:.1}% mean, {:.1}% stddev",
            mean[6], stddev[6]
        );
    }

    ensure_out_dir(&cfg.out)?;
    let mut written = Vec::new();
    if cfg.format.csv() {
        let mut rows: Vec<Vec<String>> = comparisons
            .iter()
            .zip(&table)
            .map(|(c, cols)| {
                let mut row = vec![c.sample_id.clone()];
                row.extend(cols.iter().map(|v| v.to_string()));
                row
            })
            .collect();
        if !table.is_empty() {
            for (label, cols) in [("mean", &mean), ("stddev", &stddev)] {
                let mut row = vec![label.to_string()];
                row.extend(cols.iter().map(|v| v.to_string()));
                rows.push(row);
            }
        }
        let path = cfg.out.join("compare.csv");
        write_csv(&path, &COMPARE_CSV_HEADER, &rows)?;
        written.push(path);
    }
    if cfg.format.json() {
        let report = CompareRunReport {
            net1: net1.name.clone(),
            net2: net2.name.clone(),
            delta: cfg.delta,
            bound_method: cfg.bounds,
            skipped,
            comparisons,
        };
        let path = cfg.out.join("compare.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    print_written(&written);
    Ok(0)
}

fn column_means(table: &[[f64; 7]]) -> [f64; 7] {
    let mut mean = [0.0; 7];
    if table.is_empty() {
        return mean;
    }
    for row in table {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= table.len() as f64);
    mean
}

fn column_stddevs(table: &[[f64; 7]], mean: &[f64; 7]) -> [f64; 7] {
    let mut out = [0.0; 7];
    if table.len() < 2 {
        return out;
    }
    for row in table {
        for ((o, v), m) in out.iter_mut().zip(row).zip(mean) {
            *o += (v - m) * (v - m);
        }
    }
    out.iter_mut()
        .for_each(|o| *o = (*o / (table.len() - 1) as f64).sqrt());
    out
}

fn cmd_compact(cfg: CompactConfig) -> Result<i32> {
    let net = load_network(&cfg.net1)?;
    let (compacted, what) = match cfg.scheme {
        CompactScheme::Prune { fraction, scope } => (
            prune_mbp_scoped(&net, fraction, scope)?,
            format!("pruned at fraction {fraction}"),
        ),
        CompactScheme::Quantize(q) => (quantize(&net, q)?, format!("quantized with {q:?}")),
    };
    save_network(&cfg.out, &compacted)?;

    let stats = parameter_stats(&compacted);
    let parameters: usize = stats.iter().map(|s| s.parameters).sum();
    let zeros: usize = stats.iter().map(|s| s.zeros).sum();
    let pct = if parameters == 0 {
        0.0
    } else {
        zeros as f64 / parameters as f64 * 100.0
    };
    println!(
        "{what}: `{}` now has {zeros}/{parameters} zero parameters ({pct:.1}%)",
        compacted.name
    );
    println!("wrote {}", cfg.out.display());
    Ok(0)
}

// ---- audit ----------------------------------------------------------

/// Tolerance for comparing a certified bound against sampled or exact
/// reference values in the audit suites.
const AUDIT_TOL: f64 = 1e-6;
const AUDIT_DELTAS: [f64; 3] = [0.01, 0.05, 0.2];
const AUDIT_SAMPLES: usize = 1000;

/// One broken property instance, with enough context to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Violation {
    fixture: String,
    fixture_seed: u64,
    delta: f64,
    pair: ClassPair,
    detail: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SuiteReport {
    name: String,
    checks: usize,
    /// Solves that did not certify; sound (nothing is claimed) but worth
    /// surfacing since they weaken the audit.
    uncertified: usize,
    violations: Vec<Violation>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport {
            name: name.to_string(),
            checks: 0,
            uncertified: 0,
            violations: Vec::new(),
        }
    }

    fn absorb(&mut self, part: SuitePart) {
        self.checks += part.checks;
        self.uncertified += part.uncertified;
        self.violations.extend(part.violations);
    }
}

/// Per-trial slice of a suite, merged in trial order afterwards.
#[derive(Debug, Default)]
struct SuitePart {
    checks: usize,
    uncertified: usize,
    violations: Vec<Violation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainCase {
    fixture_seed: u64,
    #[serde(flatten)]
    report: ChainReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitivitySummary {
    chains: usize,
    premises_established: usize,
    counterexamples: usize,
    cases: Vec<ChainCase>,
}

/// Whole-audit outcome. Serialization is deterministic: plain structs and
/// vectors, no timing fields, trial order fixed by the seed.
#[derive(Debug, Serialize, Deserialize)]
struct AuditReport {
    seed: u64,
    trials: usize,
    unsound_relu_injected: bool,
    suites: Vec<SuiteReport>,
    transitivity: TransitivitySummary,
    violations_total: usize,
}

/// A one-input pair whose true minimum sits strictly below every
/// activation-pattern-fixed value: logits are (-relu(x) - relu(-x), 0),
/// so the margin is -|x| with minimum -1 on [-1, 1], while treating both
/// unstable activations as identities flattens it to 0 everywhere. Any
/// encoding that drops the relaxation must report a bound above the
/// sampled minimum here.
fn canary_networks() -> Result<(Network, Network)> {
    let net1 = Network::new(
        "audit-canary",
        vec![
            Layer::Dense {
                weights: vec![1.0, -1.0],
                bias: vec![0.0, 0.0],
                in_features: 1,
                out_features: 2,
            },
            Layer::Relu {
                input_shape: vec![2],
            },
            Layer::Dense {
                weights: vec![-1.0, -1.0, 0.0, 0.0],
                bias: vec![0.0, 0.0],
                in_features: 2,
                out_features: 2,
            },
        ],
    )?;
    let net2 = make_fixture(
        FixtureKind::UniformConstant {
            inputs: 1,
            classes: 2,
        },
        0,
    )?
    .networks
    .remove(0);
    Ok((net1, net2))
}

/// Check the sandwich property for one pair of networks at one radius and
/// class pair: certified lower below every sampled value, certified upper
/// above every sampled value.
#[allow(clippy::too_many_arguments)]
fn sandwich_check(
    part: &mut SuitePart,
    fixture: &str,
    fixture_seed: u64,
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    sample_seed: u64,
    opts: &BoundOptions,
) -> Result<()> {
    let pb = bound_pair(net1, net2, region, pair, ProblemVariant::JointMargin, opts)?;
    let extrema = sample_extrema(net1, net2, region, pair, AUDIT_SAMPLES, sample_seed)?;
    part.checks += 2;
    let mut violate = |detail: String| {
        part.violations.push(Violation {
            fixture: fixture.to_string(),
            fixture_seed,
            delta: region.delta(),
            pair,
            detail,
        });
    };
    match pb.lower {
        Some(lower) if lower > extrema.min + AUDIT_TOL => violate(format!(
            "lower bound {lower} above sampled minimum {} at {:?}",
            extrema.min, extrema.argmin
        )),
        Some(_) => {}
        None => part.uncertified += 1,
    }
    match pb.upper {
        Some(upper) if extrema.max > upper + AUDIT_TOL => violate(format!(
            "sampled maximum {} at {:?} above upper bound {upper}",
            extrema.max, extrema.argmax
        )),
        Some(_) => {}
        None => part.uncertified += 1,
    }
    Ok(())
}

struct TrialOutcome {
    sandwich: SuitePart,
    exactness: SuitePart,
    independent: SuitePart,
}

fn audit_trial(fixture_seed: u64, opts: &BoundOptions) -> Result<TrialOutcome> {
    let fixture = make_fixture(FixtureKind::RandomSmall, fixture_seed)?;
    let (a, b) = (&fixture.networks[0], &fixture.networks[1]);
    let name = format!("random-{fixture_seed}");
    let pairs = [ClassPair::new(0, 1)?, ClassPair::new(1, 0)?];

    let mut sandwich = SuitePart::default();
    for (di, &delta) in AUDIT_DELTAS.iter().enumerate() {
        let region = InputRegion::new(vec![0.0; a.input_len()], delta)?;
        for (pi, &pair) in pairs.iter().enumerate() {
            let sample_seed = fixture_seed
                .wrapping_mul(31)
                .wrapping_add((di * pairs.len() + pi) as u64);
            sandwich_check(
                &mut sandwich,
                &name,
                fixture_seed,
                a,
                b,
                &region,
                pair,
                sample_seed,
                opts,
            )?;
        }
    }

    // At radius zero the region is one point and the relaxation has
    // nothing left to relax: both sides must pin the exact value.
    let mut exactness = SuitePart::default();
    let center = vec![0.0; a.input_len()];
    let region0 = InputRegion::new(center.clone(), 0.0)?;
    let pair = pairs[0];
    let pb = bound_pair(a, b, &region0, pair, ProblemVariant::JointMargin, opts)?;
    let exact = log_rpr(&a.forward(&center)?, &b.forward(&center)?, pair)?;
    exactness.checks += 1;
    match (pb.lower, pb.upper) {
        (Some(lower), Some(upper)) => {
            if (lower - exact).abs() > AUDIT_TOL || (upper - lower).abs() > AUDIT_TOL {
                exactness.violations.push(Violation {
                    fixture: name.clone(),
                    fixture_seed,
                    delta: 0.0,
                    pair,
                    detail: format!(
                        "zero-radius sandwich [{lower}, {upper}] does not pin exact value {exact}"
                    ),
                });
            }
        }
        _ => exactness.uncertified += 1,
    }

    // Adding the two single-network minima can never beat the shared-input
    // program: the joint feasible set projects into both independent ones.
    let mut independent = SuitePart::default();
    let region = InputRegion::new(vec![0.0; a.input_len()], 0.05)?;
    independent.checks += 1;
    match compare_independent(a, b, &region, pair, opts) {
        Ok(cmp) => {
            if cmp.min_independent > cmp.min_joint + AUDIT_TOL {
                independent.violations.push(Violation {
                    fixture: name,
                    fixture_seed,
                    delta: region.delta(),
                    pair,
                    detail: format!(
                        "independent sum {} above joint minimum {}",
                        cmp.min_independent, cmp.min_joint
                    ),
                });
            }
        }
        Err(Error::Solver(_)) => independent.uncertified += 1,
        Err(other) => return Err(other),
    }

    Ok(TrialOutcome {
        sandwich,
        exactness,
        independent,
    })
}

/// Transitivity chain for one seed: the fixture's first network plus two
/// pruned versions of it, ordered sparsest first.
fn audit_chain(fixture_seed: u64, opts: &BoundOptions) -> Result<ChainCase> {
    let fixture = make_fixture(FixtureKind::RandomSmall, fixture_seed)?;
    let original = fixture.networks[0].clone();
    let chain = vec![
        prune_mbp_scoped(&original, 0.5, PruneScope::JointMax)?,
        prune_mbp_scoped(&original, 0.2, PruneScope::JointMax)?,
        original,
    ];
    let region = InputRegion::new(vec![0.0; chain[0].input_len()], 0.05)?;
    let pairs = [ClassPair::new(0, 1)?];
    let mut reports = chain_transitivity(&chain, &region, &pairs, opts)?;
    Ok(ChainCase {
        fixture_seed,
        report: reports.remove(0),
    })
}

fn run_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let build = BuildOptions {
        unsound_active_relu: cfg.inject_unsound_relu,
        ..BuildOptions::default()
    };
    let opts = BoundOptions {
        method: BoundMethod::Interval,
        solve: Default::default(),
        build,
    };

    let mut rng = SplitMix64::new(cfg.seed);
    let trial_seeds: Vec<u64> = (0..cfg.trials).map(|_| rng.next_u64()).collect();

    let mut sandwich = SuiteReport::new("soundness_sandwich");
    let mut exactness = SuiteReport::new("zero_radius_exactness");
    let mut independent = SuiteReport::new("independent_vs_joint");

    // The canary runs first so a broken encoding fails fast and
    // unmistakably, whatever the random trials happen to sample.
    let (canary1, canary2) = canary_networks()?;
    let canary_region = InputRegion::new(vec![0.0], 1.0)?;
    let mut canary_part = SuitePart::default();
    sandwich_check(
        &mut canary_part,
        "canary",
        0,
        &canary1,
        &canary2,
        &canary_region,
        ClassPair::new(0, 1)?,
        cfg.seed,
        &opts,
    )?;
    sandwich.absorb(canary_part);

    let pool = worker_pool(cfg.jobs)?;
    let trials: Result<Vec<TrialOutcome>> = pool.install(|| {
        trial_seeds
            .par_iter()
            .map(|&s| audit_trial(s, &opts))
            .collect()
    });
    for outcome in trials? {
        sandwich.absorb(outcome.sandwich);
        exactness.absorb(outcome.exactness);
        independent.absorb(outcome.independent);
    }

    let chains: Result<Vec<ChainCase>> = pool.install(|| {
        trial_seeds
            .par_iter()
            .map(|&s| audit_chain(s, &opts))
            .collect()
    });
    let cases = chains?;
    let transitivity = TransitivitySummary {
        chains: cases.len(),
        premises_established: cases
            .iter()
            .filter(|c| c.report.premise_holds == Some(true))
            .count(),
        counterexamples: cases.iter().filter(|c| c.report.counterexample).count(),
        cases,
    };

    let violations_total =
        sandwich.violations.len() + exactness.violations.len() + independent.violations.len();
    Ok(AuditReport {
        seed: cfg.seed,
        trials: cfg.trials,
        unsound_relu_injected: cfg.inject_unsound_relu,
        suites: vec![sandwich, exactness, independent],
        transitivity,
        violations_total,
    })
}

fn cmd_audit(cfg: AuditConfig) -> Result<i32> {
    let report = run_audit(&cfg)?;

    for suite in &report.suites {
        println!(
            "{}: {} checks, {} violations ({} uncertified)",
            suite.name,
            suite.checks,
            suite.violations.len(),
            suite.uncertified
        );
    }
    println!(
        "transitivity: {} chains, {} premises established, {} counterexamples (reported, not failed)",
        report.transitivity.chains,
        report.transitivity.premises_established,
        report.transitivity.counterexamples
    );

    ensure_out_dir(&cfg.out)?;
    let path = cfg.out.join("audit_report.json");
    write_json(&path, &report)?;
    println!("wrote {}", path.display());

    if report.violations_total > 0 {
        for suite in &report.suites {
            for v in &suite.violations {
                eprintln!(
                    "violation in {}: fixture {} (seed {}), delta {}, pair ({}, {}): {}",
                    suite.name, v.fixture, v.fixture_seed, v.delta, v.pair.i, v.pair.j, v.detail
                );
            }
        }
        eprintln!(
            "audit FAILED: {} violations; rerun with --seed {} --trials {} to reproduce",
            report.violations_total, cfg.seed, cfg.trials
        );
        return Ok(5);
    }
    println!("audit clean: no violated properties");
    Ok(0)
}

fn print_written(paths: &[PathBuf]) {
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    if !names.is_empty() {
        println!("wrote {}", names.join(" and "));
    }
}
