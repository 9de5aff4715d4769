//! `mirror`: analyze documents, run the cloze and perplexity harnesses,
//! probe for verbatim recall, or start the HTTP service.
//!
//! Exit status is 0 on success, 1 when the engine or a backend fails and 2
//! for usage and configuration errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mirror_core::backend::{Backend, BackendError, ReplayBackend};
use mirror_core::bench::{
    load_corpus, load_items, perplexity_compare, render_perplexity_table, render_table, run_cloze_bench,
    ClozeConfig, ClozeScoring,
};
use mirror_core::canonical::to_canonical_json;
use mirror_core::expectancy::{DEFAULT_RETAIN_DIST, DEFAULT_TOP_K, DEFAULT_Z_THRESHOLD};
use mirror_core::memorization::{freerun_match, teacher_forced_overlay, DEFAULT_PREFIX_TOKENS};
use mirror_core::render::{render_ansi, render_html, render_memorization_ansi, render_memorization_html};
use mirror_core::{analyze_document, AnalysisError, AnalysisOptions};
use mirror_service::config::CONFIG_ENV;
use mirror_service::{ConfigError, ServeError, ServiceConfig};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Serve(ServeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Serve(ServeError::Config(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mirror", version, about = "Token-level expectancy analysis against a language model")]
struct Cli {
    /// Service config, used to resolve backend ids.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a document and render its z-score heatmap.
    Analyze(AnalyzeArgs),
    /// Two-candidate cloze benchmark over one or more backends.
    Bench(BenchArgs),
    /// Per-group difference in log-perplexity between two backends.
    ComparePpl(ComparePplArgs),
    /// Verbatim-recall probe.
    Memcheck(MemcheckArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ansi,
    Html,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Table,
    Json,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Backend id from the config, or a replay fixture file or directory.
    #[arg(long)]
    backend: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "ansi")]
    format: Format,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = DEFAULT_Z_THRESHOLD)]
    z_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_RETAIN_DIST)]
    retain_dist: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Repeat to compare several backends.
    #[arg(long, required = true)]
    backend: Vec<String>,
    /// JSONL cloze items.
    #[arg(long)]
    items: PathBuf,
    /// Score only the candidate span instead of the whole completed text.
    #[arg(long)]
    span_only: bool,
    /// Length-normalize log-likelihoods.
    #[arg(long)]
    per_token: bool,
    /// Training FLOPs, one per backend in the same order.
    #[arg(long)]
    flops: Vec<f64>,
    #[arg(long, value_enum, default_value = "table")]
    format: TableFormat,
    /// Also write the JSON reports here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ComparePplArgs {
    /// Exactly two: A then B. Rows report mean log-perplexity of A minus B.
    #[arg(long, required = true, num_args = 1)]
    backend: Vec<String>,
    #[arg(long)]
    corpus: PathBuf,
    /// Defaults to `manifest.jsonl` inside the corpus directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    TeacherForced,
    FreeRun,
}

#[derive(Args)]
struct MemcheckArgs {
    #[arg(long)]
    backend: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "teacher-forced")]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_PREFIX_TOKENS)]
    prefix_tokens: usize,
    #[arg(long, value_enum, default_value = "ansi")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Overrides the bind address in the config.
    #[arg(long)]
    bind: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mirror: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Analyze(a) => analyze(config, a),
        Command::Bench(a) => bench(config, a),
        Command::ComparePpl(a) => compare_ppl(config, a),
        Command::Memcheck(a) => memcheck(config, a),
        Command::Serve(a) => serve(config, a),
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a non-empty input document.
fn read_input(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read input {}: {e}", path.display())))?;
    if text.is_empty() {
        return Err(CliError::Usage(format!("input {} is empty", path.display())));
    }
    Ok(text)
}

/// A fixture path if one exists by that name, otherwise a config backend id.
fn resolve_backend(config: Option<&Path>, spec: &str) -> Result<Arc<dyn Backend>> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(Arc::new(ReplayBackend::load(path)?));
    }
    let config = ServiceConfig::locate(config).map_err(|e| match e {
        ConfigError::Missing => CliError::Usage(format!(
            "{spec:?} is neither a fixture path nor resolvable: no config file (pass --config or set {CONFIG_ENV})"
        )),
        other => CliError::Config(other),
    })?;
    config
        .build_backends()?
        .into_iter()
        .find(|b| b.descriptor().backend_id == spec)
        .ok_or_else(|| CliError::Usage(format!("unknown backend {spec:?}")))
}

fn emit(out: Option<&Path>, mut body: String) -> Result<()> {
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, body).map_err(io_error(path)),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(io_error(Path::new("<stdout>"))),
    }
}

fn render_failure(e: serde_json::Error) -> CliError {
    CliError::Usage(format!("cannot render: {e}"))
}

fn analyze(config: Option<&Path>, a: AnalyzeArgs) -> Result<()> {
    let text = read_input(&a.input)?;
    let backend = resolve_backend(config, &a.backend)?;
    let options = AnalysisOptions {
        top_k: a.top_k,
        z_threshold: a.z_threshold,
        retain_dist: a.retain_dist,
        ..AnalysisOptions::default()
    };
    let json = analyze_document(&text, backend.as_ref(), &options)?.to_canonical_json();
    let body = match a.format {
        Format::Json => json,
        Format::Ansi => render_ansi(&json).map_err(render_failure)?,
        Format::Html => render_html(&json).map_err(render_failure)?,
    };
    emit(a.out.as_deref(), body)
}

fn bench(config: Option<&Path>, a: BenchArgs) -> Result<()> {
    if !a.items.is_file() {
        return Err(CliError::Usage(format!("items file {} not found", a.items.display())));
    }
    let items = load_items(&a.items).map_err(|e| CliError::Usage(e.to_string()))?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("{} has no items", a.items.display())));
    }
    if !a.flops.is_empty() && a.flops.len() != a.backend.len() {
        return Err(CliError::Usage("give one --flops value per --backend".into()));
    }
    let cfg = ClozeConfig {
        scoring: if a.span_only { ClozeScoring::SpanOnly } else { ClozeScoring::FullSequence },
        per_token: a.per_token,
    };
    let mut reports = Vec::new();
    for (i, spec) in a.backend.iter().enumerate() {
        let backend = resolve_backend(config, spec)?;
        let mut report = run_cloze_bench(&items, backend.as_ref(), cfg)?;
        report.flops = a.flops.get(i).copied();
        for f in &report.failures {
            log::warn!("{}: item {} not scored: {}", report.backend_id, f.source_id, f.error);
        }
        reports.push(report);
    }
    let json = to_canonical_json(&reports);
    if let Some(path) = &a.out {
        emit(Some(path), json.clone())?;
    }
    match a.format {
        TableFormat::Table => emit(None, render_table(&reports)),
        TableFormat::Json => emit(None, json),
    }
}

fn compare_ppl(config: Option<&Path>, a: ComparePplArgs) -> Result<()> {
    let [spec_a, spec_b] = a.backend.as_slice() else {
        return Err(CliError::Usage("compare-ppl takes exactly two --backend values".into()));
    };
    let manifest = a.manifest.clone().unwrap_or_else(|| a.corpus.join("manifest.jsonl"));
    if !manifest.is_file() {
        return Err(CliError::Usage(format!("manifest {} not found", manifest.display())));
    }
    let corpus = load_corpus(&a.corpus, &manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    let backend_a = resolve_backend(config, spec_a)?;
    let backend_b = resolve_backend(config, spec_b)?;
    let cmp = perplexity_compare(&corpus, backend_a.as_ref(), backend_b.as_ref());
    for x in &cmp.excluded {
        log::warn!("excluded {}: {}", x.path.display(), x.reason);
    }
    let json = to_canonical_json(&cmp);
    if let Some(path) = &a.out {
        emit(Some(path), json.clone())?;
    }
    match a.format {
        TableFormat::Table => emit(None, render_perplexity_table(&cmp)),
        TableFormat::Json => emit(None, json),
    }
}

fn memcheck(config: Option<&Path>, a: MemcheckArgs) -> Result<()> {
    let text = read_input(&a.input)?;
    let backend = resolve_backend(config, &a.backend)?;
    let report = match a.mode {
        Mode::TeacherForced => teacher_forced_overlay(&text, backend.as_ref())?,
        Mode::FreeRun => freerun_match(&text, backend.as_ref(), a.prefix_tokens)?,
    };
    let json = to_canonical_json(&report);
    let body = match a.format {
        Format::Json => json,
        Format::Ansi => render_memorization_ansi(&json).map_err(render_failure)?,
        Format::Html => render_memorization_html(&json).map_err(render_failure)?,
    };
    emit(a.out.as_deref(), body)
}

fn serve(config: Option<&Path>, a: ServeArgs) -> Result<()> {
    let mut config = ServiceConfig::locate(config)?;
    if let Some(bind) = a.bind {
        config.bind = bind;
    }
    // surface config problems before binding
    config.build_backends()?;
    let runtime = tokio::runtime::Runtime::new().map_err(io_error(Path::new("<runtime>")))?;
    runtime.block_on(mirror_service::serve(config)).map_err(CliError::Serve)
}
