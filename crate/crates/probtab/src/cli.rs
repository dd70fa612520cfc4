//! The `probtab` command line: `generate`, `evaluate` and `compare`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use probtab_core::fidelity::{
    aggregate_runs, comparison_report, conditional_frequencies, ComparisonReport, FrequencyTable, StrategyColumn,
};
use probtab_core::oracle::{CallCounters, Completion, OracleRequest, RetryPolicy, TransportError};
use probtab_core::pipeline::{CellFailureMode, RunResult};
use probtab_core::{DatasetSchema, GenerationOptions, GenerationRun, Generator, Oracle, Strategy};

use crate::bundled;
use crate::config::{parse_document, parse_schema, read_file, Document};
use crate::fixture::{reference_table, FixtureOracle};
use crate::http::{HttpConfig, HttpOracle, DEFAULT_API_KEY_ENV, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MODEL};
use crate::io::{read_report, read_table, write_bytes, write_run, write_text, CallSummary};

#[derive(Debug, Parser)]
#[command(
    name = "probtab",
    version,
    about = "Generate synthetic categorical tables from language-model probability estimates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one or more tables with a single strategy.
    Generate(GenerateArgs),
    /// Compare generated runs against a reference distribution.
    Evaluate(EvaluateArgs),
    /// Run all three strategies and report them side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// `fixture:NAME` for a bundled fixture, `fixture:PATH` for a fixture file, or `http`.
    #[arg(long)]
    pub oracle: String,
    /// Chat-completions URL for `--oracle http`.
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    pub endpoint: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_IN_FLIGHT)]
    pub max_in_flight: usize,
    /// Sampling temperature for every prompt kind.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub max_retries: u32,
    /// Maximum whole-table requests per table-wide run.
    #[arg(long, default_value_t = 20)]
    pub batch_cap: u32,
    /// Drop rows whose cell cannot be obtained, or abort the run.
    #[arg(long, default_value = "skip", value_parser = ["skip", "abort"])]
    pub on_cell_failure: String,
    /// Text placed before each row's context; repeat to assign round-robin.
    #[arg(long = "seed-text")]
    pub seed_texts: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Schema file, or the name of a bundled schema.
    #[arg(long, default_value = "california")]
    pub schema: String,
    /// Rows per run.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    /// Base seed; run `k` uses `seed + k`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Execute runs concurrently.
    #[arg(long)]
    pub parallel_runs: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long, value_parser = ["probability-driven", "table-wide", "cell-by-cell"])]
    pub strategy: String,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Feature whose distribution is compared. Defaults to the last multi-category feature.
    #[arg(long)]
    pub target: Option<String>,
    /// Conditioning feature. Defaults to the multi-category feature before the target.
    #[arg(long, conflicts_with = "marginal")]
    pub given: Option<String>,
    /// Compare the unconditioned distribution of the target.
    #[arg(long)]
    pub marginal: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "california")]
    pub schema: String,
    /// Fixture holding the reference conditionals (`NAME`, `fixture:NAME` or a path).
    #[arg(long)]
    pub reference: String,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Directory for `comparison.report` and panel files; the report goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run CSV files, or directories searched for `run_<k>.csv`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Reference fixture; defaults to the oracle's fixture.
    #[arg(long)]
    pub reference: Option<String>,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug)]
pub enum CliError {
    /// Exit status 2.
    Config(String),
    /// Exit status 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

pub fn load_schema(spec: &str) -> Result<DatasetSchema, CliError> {
    let text = match bundled::schema(spec) {
        Some(t) => t.to_string(),
        None => read_file(Path::new(spec)).map_err(config_err)?,
    };
    parse_schema(&text).map_err(|e| CliError::Config(format!("{spec}: {e}")))
}

fn load_fixture_document(spec: &str) -> Result<Document, CliError> {
    let spec = spec.strip_prefix("fixture:").unwrap_or(spec);
    let text = match bundled::fixture(spec) {
        Some(t) => t.to_string(),
        None => read_file(Path::new(spec)).map_err(config_err)?,
    };
    parse_document(&text).map_err(|e| CliError::Config(format!("{spec}: {e}")))
}

/// Display name of a fixture: its bundled name or file stem.
fn fixture_name(spec: &str) -> String {
    let spec = spec.strip_prefix("fixture:").unwrap_or(spec);
    Path::new(spec)
        .file_stem()
        .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned())
}

/// Where oracles for individual runs come from.
enum OracleSource {
    /// Each run gets a fresh fixture so scripted replies restart per run.
    Fixture(Document),
    /// Runs share one client and its in-flight limit.
    Http(HttpOracle),
}

enum RunOracle<'a> {
    Fixture(FixtureOracle),
    Http(&'a HttpOracle),
}

impl Oracle for RunOracle<'_> {
    fn complete(&self, request: &OracleRequest<'_>) -> Result<Completion, TransportError> {
        match self {
            RunOracle::Fixture(f) => f.complete(request),
            RunOracle::Http(h) => h.complete(request),
        }
    }

    fn backoff(&self, delay: Duration) {
        match self {
            RunOracle::Fixture(f) => f.backoff(delay),
            RunOracle::Http(h) => h.backoff(delay),
        }
    }
}

impl OracleSource {
    fn from_args(args: &OracleArgs) -> Result<Self, CliError> {
        if args.oracle == "http" {
            let config = HttpConfig {
                endpoint: args.endpoint.clone(),
                model: args.model.clone(),
                api_key_env: args.api_key_env.clone(),
                timeout: Duration::from_secs(args.timeout_secs),
                max_in_flight: args.max_in_flight,
            };
            return HttpOracle::new(config).map(OracleSource::Http).map_err(config_err);
        }
        if !args.oracle.starts_with("fixture:") {
            return Err(CliError::Config(format!(
                "--oracle must be `http` or `fixture:NAME|PATH`, got `{}`",
                args.oracle
            )));
        }
        let doc = load_fixture_document(&args.oracle)?;
        // Validate once up front so per-run construction cannot fail.
        FixtureOracle::new(doc.clone()).map_err(config_err)?;
        Ok(OracleSource::Fixture(doc))
    }

    fn for_run(&self) -> RunOracle<'_> {
        match self {
            OracleSource::Fixture(doc) => {
                RunOracle::Fixture(FixtureOracle::new(doc.clone()).expect("validated in from_args"))
            }
            OracleSource::Http(h) => RunOracle::Http(h),
        }
    }
}

fn options(args: &OracleArgs) -> GenerationOptions {
    let mut policy = RetryPolicy {
        max_retries: args.max_retries,
        ..RetryPolicy::default()
    };
    if let Some(t) = args.temperature {
        policy = policy.with_temperature(t);
    }
    GenerationOptions {
        policy,
        table_batch_cap: args.batch_cap,
        cell_failure: match args.on_cell_failure.as_str() {
            "abort" => CellFailureMode::AbortRun,
            _ => CellFailureMode::SkipRow,
        },
        seed_texts: args.seed_texts.clone(),
    }
}

/// Runs `strategy` `runs` times with seeds `seed + k`, in run order.
fn execute(
    source: &OracleSource,
    options: &GenerationOptions,
    strategy: Strategy,
    schema: &DatasetSchema,
    run: &RunArgs,
) -> Vec<(u64, RunResult)> {
    let one = |k: u64| {
        let seed = run.seed.wrapping_add(k);
        let oracle = source.for_run();
        let result = Generator::with_options(&oracle, options.clone()).run(strategy, schema, run.n, seed);
        (seed, result)
    };
    if run.parallel_runs && run.runs > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..run.runs).map(|k| s.spawn(move || one(k))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        })
    } else {
        (0..run.runs).map(one).collect()
    }
}

/// Outcome of one strategy's runs after writing them out.
struct StrategyRuns {
    strategy: Strategy,
    runs: Vec<GenerationRun>,
    calls: CallCounters,
    errors: Vec<String>,
}

fn execute_and_write(
    source: &OracleSource,
    options: &GenerationOptions,
    strategy: Strategy,
    schema: &DatasetSchema,
    args: &RunArgs,
) -> Result<StrategyRuns, CliError> {
    let mut out = StrategyRuns {
        strategy,
        runs: Vec::new(),
        calls: CallCounters::default(),
        errors: Vec::new(),
    };
    for (k, (seed, result)) in execute(source, options, strategy, schema, args).into_iter().enumerate() {
        match result {
            Ok(run) => {
                out.calls.merge(&run.call_log.counters());
                let paths = write_run(&args.out, k, &run).map_err(runtime_err)?;
                if let Some(s) = run.shortfall {
                    eprintln!(
                        "{strategy} run {k} (seed {seed}): received {} of {} rows",
                        s.received, s.requested
                    );
                }
                if run.failed_rows > 0 {
                    eprintln!("{strategy} run {k} (seed {seed}): {} row(s) dropped", run.failed_rows);
                }
                log::info!("wrote {}", paths.csv.display());
                out.runs.push(run);
            }
            Err(failure) => {
                out.calls.merge(&failure.call_log.counters());
                let message = format!("{strategy} run {k} (seed {seed}): {}", failure.error);
                eprintln!("{message}");
                out.errors.push(message);
            }
        }
    }
    Ok(out)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.run.schema)?;
    let strategy = Strategy::parse(&args.strategy).expect("clap restricts values");
    let source = OracleSource::from_args(&args.oracle)?;
    let done = execute_and_write(&source, &options(&args.oracle), strategy, &schema, &args.run)?;
    if done.errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} run(s) failed",
            done.errors.len(),
            args.run.runs
        )))
    }
}

/// Resolves `--target`, `--given` and `--marginal` against `schema`.
fn targets(schema: &DatasetSchema, args: &TargetArgs) -> Result<(String, Option<String>), CliError> {
    let multi: Vec<usize> = (0..schema.features().len())
        .filter(|&i| !schema.features()[i].is_single_category())
        .collect();
    let name = |i: usize| schema.features()[i].name.clone();
    let target = match &args.target {
        Some(t) => {
            schema
                .position(t)
                .ok_or_else(|| CliError::Config(format!("unknown feature `{t}`")))?;
            t.clone()
        }
        None => multi
            .last()
            .map(|&i| name(i))
            .ok_or_else(|| CliError::Config("schema has no multi-category feature".into()))?,
    };
    if args.marginal {
        return Ok((target, None));
    }
    let given = match &args.given {
        Some(g) => {
            schema
                .position(g)
                .ok_or_else(|| CliError::Config(format!("unknown feature `{g}`")))?;
            Some(g.clone())
        }
        None => {
            let t = schema.position(&target).expect("checked above");
            multi.iter().rev().find(|&&i| i < t).map(|&i| name(i))
        }
    };
    Ok((target, given))
}

/// Panel data for each report column, as CSV bytes keyed by column name.
fn panel_files(report: &ComparisonReport, reference: &FrequencyTable) -> Vec<(String, Vec<u8>)> {
    let group = reference.given.clone().unwrap_or_else(|| "group".into());
    report
        .panels
        .iter()
        .map(|(name, rows)| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([group.as_str(), reference.target.as_str(), "percent", "strategy"])
                .expect("in-memory write");
            for r in rows {
                w.write_record([&r.group, &r.category, &format!("{:.4}", r.percent), &r.strategy])
                    .expect("in-memory write");
            }
            (name.clone(), w.into_inner().expect("in-memory flush"))
        })
        .collect()
}

fn emit_report(report: &ComparisonReport, reference: &FrequencyTable, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(out) => {
            write_text(&out.join("comparison.report"), &report.text).map_err(runtime_err)?;
            for (name, bytes) in panel_files(report, reference) {
                write_bytes(&out.join("panels").join(format!("{name}.csv")), &bytes).map_err(runtime_err)?;
            }
        }
        None => print!("{}", report.text),
    }
    let mut summary = String::new();
    for (name, tv) in &report.mean_tv {
        match tv {
            Some(tv) => writeln!(summary, "{name}: mean TV {tv:.4}"),
            None => writeln!(summary, "{name}: mean TV -"),
        }
        .expect("string write");
    }
    if out.is_some() {
        print!("{summary}");
    }
    Ok(())
}

fn build_reference(
    spec: &str,
    schema: &DatasetSchema,
    target: &str,
    given: Option<&str>,
) -> Result<FrequencyTable, CliError> {
    let doc = load_fixture_document(spec)?;
    let fixture = FixtureOracle::new(doc).map_err(config_err)?;
    reference_table(&fixture, schema, target, given).map_err(|e| CliError::Config(format!("reference {spec}: {e}")))
}

fn column(
    name: &str,
    tables: &[FrequencyTable],
    calls: CallCounters,
    errors: &[String],
) -> Result<StrategyColumn, CliError> {
    let runs = tables.len() + errors.len();
    if tables.is_empty() {
        return Ok(StrategyColumn {
            name: name.into(),
            aggregate: None,
            calls,
            runs,
            failure: Some(errors.first().cloned().unwrap_or_else(|| "no runs".into())),
        });
    }
    Ok(StrategyColumn {
        name: name.into(),
        aggregate: Some(aggregate_runs(tables).map_err(runtime_err)?),
        calls,
        runs,
        failure: None,
    })
}

/// Expands directories into their `run_<k>.csv` files, searching one level of
/// strategy subdirectories as well.
fn collect_csvs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn runs_in(dir: &Path) -> Result<Vec<(u64, PathBuf)>, CliError> {
        let mut found = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(runtime_err)?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(k) = name
                .strip_prefix("run_")
                .and_then(|s| s.strip_suffix(".csv"))
                .and_then(|s| s.parse::<u64>().ok())
            {
                found.push((k, path));
            }
        }
        found.sort();
        Ok(found)
    }
    let mut out = Vec::new();
    for input in inputs {
        if !input.is_dir() {
            out.push(input.clone());
            continue;
        }
        let direct = runs_in(input)?;
        if !direct.is_empty() {
            out.extend(direct.into_iter().map(|(_, p)| p));
            continue;
        }
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for d in subdirs {
            out.extend(runs_in(&d)?.into_iter().map(|(_, p)| p));
        }
    }
    if out.is_empty() {
        return Err(CliError::Runtime("no run files found".into()));
    }
    Ok(out)
}

fn strategy_order(name: &str) -> (usize, String) {
    let rank = Strategy::parse(name).map_or(Strategy::ALL.len(), |s| {
        Strategy::ALL.iter().position(|k| *k == s).expect("listed")
    });
    (rank, name.to_string())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let (target, given) = targets(&schema, &args.target)?;
    let reference = build_reference(&args.reference, &schema, &target, given.as_deref())?;
    let files = collect_csvs(&args.runs)?;

    let mut groups: BTreeMap<(usize, String), (Vec<FrequencyTable>, CallCounters)> = BTreeMap::new();
    for csv in &files {
        let table = read_table(csv, &schema).map_err(runtime_err)?;
        let report_path = csv.with_extension("report");
        let (strategy, calls) = if report_path.exists() {
            let r = read_report(&report_path).map_err(runtime_err)?;
            (r.strategy, CallCounters::from(&r.calls))
        } else {
            let dir = csv
                .parent()
                .and_then(|p| p.file_name())
                .map_or_else(|| "runs".to_string(), |n| n.to_string_lossy().into_owned());
            (dir, CallCounters::from(&CallSummary::default()))
        };
        let freq = conditional_frequencies(&table, &target, given.as_deref())
            .map_err(|e| CliError::Runtime(format!("{}: {e}", csv.display())))?;
        let entry = groups.entry(strategy_order(&strategy)).or_default();
        entry.0.push(freq);
        entry.1.merge(&calls);
    }
    let columns = groups
        .into_iter()
        .map(|((_, name), (tables, calls))| column(&name, &tables, calls, &[]))
        .collect::<Result<Vec<_>, _>>()?;
    let report = comparison_report(&fixture_name(&args.reference), &reference, &columns).map_err(runtime_err)?;
    emit_report(&report, &reference, args.out.as_deref())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.run.schema)?;
    let (target, given) = targets(&schema, &args.target)?;
    let reference_spec = match (&args.reference, args.oracle.oracle.starts_with("fixture:")) {
        (Some(r), _) => r.clone(),
        (None, true) => args.oracle.oracle.clone(),
        (None, false) => return Err(CliError::Config("--reference is required with --oracle http".into())),
    };
    let reference = build_reference(&reference_spec, &schema, &target, given.as_deref())?;
    let source = OracleSource::from_args(&args.oracle)?;
    let options = options(&args.oracle);

    let mut columns = Vec::new();
    let mut failed = Vec::new();
    for strategy in Strategy::ALL {
        let done = execute_and_write(&source, &options, strategy, &schema, &args.run)?;
        let tables = done
            .runs
            .iter()
            .map(|r| conditional_frequencies(&r.table, &target, given.as_deref()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(runtime_err)?;
        columns.push(column(done.strategy.as_str(), &tables, done.calls, &done.errors)?);
        failed.extend(done.errors);
    }
    let report = comparison_report(&fixture_name(&reference_spec), &reference, &columns).map_err(runtime_err)?;
    emit_report(&report, &reference, Some(&args.run.out))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} run(s) failed", failed.len())))
    }
}
