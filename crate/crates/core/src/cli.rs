//! Command-line front end: `run`, `analyze`, `summarize`, `report` and
//! `validate`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, Exemplar};
use crate::backend::{self, BackendConfig, BackendError};
use crate::model::{RoleId, RoleSpec};
use crate::orchestrator::{self, BatchOptions, Clock};
use crate::report::{self, ReportDocument};
use crate::store::{self, RecordWriter, StoreError, RECORDS_FILE};

/// Exit status for a configuration error; clap uses 2 for usage errors.
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tom-harness", version, about = "Nine-instance clone-awareness Theory of Mind harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute trials and append records to <out>/records.jsonl.
    Run(RunArgs),
    /// Analyse a record file and write the machine-readable report.
    Analyze(AnalyzeArgs),
    /// Ask a backend for an exemplar of one advisor's instructions.
    Summarize(SummarizeArgs),
    /// Render the report tables as text.
    Report(ReportArgs),
    /// Integrity-check a record file.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum BackendChoice {
    Mock,
    Live,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendChoice,
    /// Directory of mock fixture files (default: built-in script).
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, default_value = "gpt-4-turbo")]
    pub model: String,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 8)]
    pub max_concurrency: usize,
    #[arg(long)]
    pub requests_per_second: Option<f64>,
}

impl BackendArgs {
    fn config(&self) -> BackendConfig {
        let mut config = match self.backend {
            BackendChoice::Mock => BackendConfig::mock(),
            BackendChoice::Live => BackendConfig::live(&self.endpoint, &self.api_key_env),
        };
        config.timeout_ms = self.timeout_secs.saturating_mul(1000);
        config.max_retries = self.max_retries;
        config.max_concurrency = self.max_concurrency;
        config.requests_per_second = self.requests_per_second;
        if self.backend == BackendChoice::Mock {
            config.fixtures_dir = self.fixtures.clone();
        }
        config
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub trials: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Shuffles dispatch order; records do not depend on it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-role temperature, e.g. `--temperature 7=0.2`. Repeatable.
    #[arg(long = "temperature", value_name = "ROLE=VALUE")]
    pub temperatures: Vec<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory or record file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Where to write the JSON report (default: analysis.json next to the records).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Advisor whose instructions are summarised (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub source: u8,
    #[arg(long, default_value_t = analysis::DEFAULT_CONTEXT_BUDGET)]
    pub budget_tokens: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Also write the machine-readable report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Everything that determines a run, written to `<out>/run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub trials: usize,
    pub backend: BackendConfig,
    pub role_specs: Vec<RoleSpec>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub seed: Option<u64>,
    pub config_hash: String,
}

fn parse_temperature(s: &str) -> Result<(RoleId, f64), CliError> {
    let bad = || CliError::Config(format!("temperature override {s:?} is not ROLE=VALUE with ROLE in 1-9"));
    let (role, value) = s.split_once('=').ok_or_else(bad)?;
    let role = role.trim().parse::<u8>().ok().and_then(RoleId::new).ok_or_else(bad)?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    if !(value >= 0.0 && value.is_finite()) {
        return Err(CliError::Config(format!("temperature for role {role} must be >= 0")));
    }
    Ok((role, value))
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<RunConfig, CliError> {
        if args.trials == 0 {
            return Err(CliError::Config("--trials must be at least 1".into()));
        }
        if args.parallelism == 0 {
            return Err(CliError::Config("--parallelism must be at least 1".into()));
        }
        let backend = args.backend.config();
        backend.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let mut role_specs = RoleSpec::defaults(&args.backend.model);
        for t in &args.temperatures {
            let (role, value) = parse_temperature(t)?;
            role_specs[role.ordinal() as usize - 1].temperature = value;
        }
        let config_hash = orchestrator::config_hash(&role_specs, &backend);
        Ok(RunConfig {
            trials: args.trials,
            backend,
            role_specs,
            output_dir: args.out.clone(),
            parallelism: args.parallelism,
            seed: args.seed,
            config_hash,
        })
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let config = RunConfig::from_args(args)?;
    let backend = backend::build_backend(&config.backend).map_err(|e| CliError::Config(e.to_string()))?;
    let plans = orchestrator::plan_batch(config.trials, &config.role_specs, &config.backend)
        .map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| CliError::Config(format!(
        "cannot create {}: {e}",
        config.output_dir.display()
    )))?;
    store::write_json(&config.output_dir.join("run_config.json"), &config)?;
    let mut writer = RecordWriter::open(&config.output_dir.join(RECORDS_FILE), &config.config_hash)?;
    let options = BatchOptions {
        parallelism: config.parallelism,
        seed: config.seed,
        clock: Clock::System,
    };
    let mut write_error = None;
    let records = runtime()
        .block_on(orchestrator::run_batch(&plans, Arc::clone(&backend), options, |record| {
            if write_error.is_none() {
                if let Err(e) = writer.append(record) {
                    write_error = Some(e);
                }
            }
            tracing::info!(trial = record.trial_index, complete = record.is_complete(), "trial finished");
        }))
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let complete = records.iter().filter(|r| r.is_complete()).count();
    println!(
        "{} trials written to {} ({} complete, {} failed)",
        records.len(),
        writer.path().display(),
        complete,
        records.len() - complete
    );
    Ok(())
}

fn analysis_document(input: &Path) -> Result<ReportDocument, CliError> {
    let (header, records) = store::read_records(input)?;
    let analysis = analysis::analyze_batch(&records)?;
    Ok(ReportDocument::new(&header.config_hash, analysis))
}

fn default_output(input: &Path, name: &str) -> PathBuf {
    let records = store::records_path(input);
    records.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let doc = analysis_document(&args.input)?;
    let out = args.out.clone().unwrap_or_else(|| default_output(&args.input, "analysis.json"));
    store::write_json(&out, &doc)?;
    println!(
        "n_trials={} n_preference={} report={}",
        doc.analysis.n_trials,
        doc.analysis.n_preference,
        out.display()
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let doc = analysis_document(&args.input)?;
    print!("{}", report::render_text(&doc.analysis));
    if let Some(path) = &args.json {
        store::write_json(path, &doc)?;
    }
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<(), CliError> {
    let source = RoleId::new(args.source)
        .filter(|r| r.is_advisor())
        .ok_or_else(|| CliError::Config(format!("--source must be 1 or 2, got {}", args.source)))?;
    let (_, records) = store::read_records(&args.input)?;
    let texts = analysis::instruction_texts(&records, source);
    let request = analysis::build_exemplar_request(&texts, &args.backend.model, args.budget_tokens)?;
    let config = args.backend.config();
    let backend = backend::build_backend(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let response = runtime().block_on(backend.complete(&request))?;
    let exemplar = Exemplar::new(source, texts.len(), &request, &response.content, &backend.id());
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_output(&args.input, &format!("exemplar-{source}.json")));
    store::write_json(&out, &exemplar)?;
    println!("exemplar for role {source} from {} instruction sets written to {}", texts.len(), out.display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), CliError> {
    let report = store::validate_file(&args.input)?;
    for problem in &report.problems {
        for v in &problem.violations {
            println!(
                "line {}{}: {v}",
                problem.line,
                problem.trial_id.as_deref().map(|id| format!(" ({id})")).unwrap_or_default()
            );
        }
    }
    println!(
        "{}: {} records, {} complete, {} with problems",
        report.path.display(),
        report.records,
        report.complete,
        report.problems.len()
    );
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} failed validation", report.path.display())))
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Report(a) => cmd_report(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
