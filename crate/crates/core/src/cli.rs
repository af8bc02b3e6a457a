//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and domain errors,
//! 2 when a model backend kept failing after retries.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{consistency_report, semantic_deltas, AnalysisError, PromptPair, SimilarityMatrix};
use crate::config::{load_pairs, load_prompt, load_task, ConfigError, RunConfig};
use crate::eval::EvalError;
use crate::evolution::{run_calibration, EvolutionError, TraceLog};
use crate::gateway::GatewayError;
use crate::model::ModelRole;
use crate::persist::{load_stamped_json, save_archive, save_stamped_json, write_atomic, PersistError};
use crate::template::{PromptOrigin, PromptTemplate};
use crate::transfer::{
    adapt_prompt, drift_matrix, extract_mapping, in_context_mapping, AdapterDomain, AdapterDomainTemplate, AdapterMode,
    DriftModel, TransferError, TransferMapping,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Remote(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Remote(_) => 2,
        }
    }
}

fn gateway_error(e: GatewayError) -> CliError {
    if e.is_remote_failure() {
        CliError::Remote(e.to_string())
    } else {
        CliError::Domain(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Gateway(g) => gateway_error(g),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<TransferError> for CliError {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::Gateway(g) => gateway_error(g),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Gateway(g) => gateway_error(g),
            other => CliError::Domain(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "promptbridge", version, about = "Calibrate, transfer and compare prompts across language models")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve a seed prompt into a model-specific optimum.
    Calibrate(CalibrateArgs),
    /// Learn or apply a cross-model transfer mapping.
    #[command(subcommand)]
    Transfer(TransferCommand),
    /// Evaluate every model's optimal prompt on every model.
    Drift(DriftArgs),
    /// Evaluate one prompt on one model.
    Eval(EvalArgs),
    /// Embedding-based similarity studies.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

fn parse_role(s: &str) -> Result<ModelRole, String> {
    s.parse::<ModelRole>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    seed_prompt: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Archive output (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Role of the model being calibrated.
    #[arg(long, default_value = "target", value_parser = parse_role)]
    model: ModelRole,
    /// Best prompt output; defaults to `<out>.best.json`.
    #[arg(long)]
    best: Option<PathBuf>,
    /// Trace output; defaults to `<out>.trace.jsonl`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TransferCommand {
    /// Summarize how aligned prompts differ between the source and target models.
    Extract(ExtractArgs),
    /// Rewrite a source prompt for the target model using a mapping.
    Adapt(AdaptArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `summary` calls the mapping extractor; `one-shot` and `few-shot`
    /// embed the raw pairs instead.
    #[arg(long, default_value = "summary")]
    mode: AdapterMode,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    source_prompt: PathBuf,
    /// coding, swe-agent, terminal-agent, planner or generic.
    #[arg(long)]
    domain: AdapterDomain,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Custom adapter template body (overrides the built-in one).
    #[arg(long)]
    template: Option<PathBuf>,
    /// Source model name; defaults to the configured source model.
    #[arg(long)]
    from: Option<String>,
    /// Target model name; defaults to the configured target model.
    #[arg(long)]
    to: Option<String>,
}

#[derive(Debug, Args)]
struct DriftArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory with `<model name>.json` or `<model name>.txt` prompts.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    prompt: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, value_parser = parse_role)]
    model: ModelRole,
    #[arg(long)]
    config: PathBuf,
    /// Evaluate a seeded sample of this many instances.
    #[arg(long)]
    sample: Option<usize>,
    /// Full per-instance results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Cosine alignment of source→target edit vectors across tasks.
    Deltas(DeltasArgs),
    /// Pairwise similarity of repeated run outputs.
    Consistency(ConsistencyArgs),
}

#[derive(Debug, Args)]
struct DeltasArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConsistencyArgs {
    /// Run outputs: text files, or mapping JSON files (their summary is used).
    #[arg(long, num_args = 2.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Calibrate(a) => calibrate(a),
        Command::Transfer(TransferCommand::Extract(a)) => extract(a),
        Command::Transfer(TransferCommand::Adapt(a)) => adapt(a),
        Command::Drift(a) => drift(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(AnalyzeCommand::Deltas(a)) => deltas(a),
        Command::Analyze(AnalyzeCommand::Consistency(a)) => consistency(a),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn all_failed(failures: u64, calls: u64) -> bool {
    calls > 0 && failures >= calls
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    cfg.require(&[a.model, ModelRole::Reflection])?;
    let task = load_task(&a.task)?;
    let seed = load_prompt(&a.seed_prompt, PromptOrigin::Seed)?;
    let target = cfg.evaluator(a.model, &task)?;
    let reflection = cfg.client(ModelRole::Reflection)?;
    let trace_path = a.trace.unwrap_or_else(|| sibling(&a.out, "trace.jsonl"));
    if let Some(dir) = trace_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("{}: {e}", dir.display())))?;
    }
    let trace = TraceLog::to_file(&trace_path).map_err(|e| CliError::Domain(format!("{}: {e}", trace_path.display())))?;

    let result = run_calibration(&task, &seed, &target, &reflection, &cfg.evolution, trace)?;
    let target_calls = target.client().gateway().chat_calls();
    if all_failed(target.model_failures(), target_calls) {
        return Err(CliError::Remote(format!(
            "every call to model `{}` failed",
            target.client().model().name
        )));
    }

    let digest = cfg.digest();
    save_archive(&result.archive, &a.out, &digest)?;
    let best_path = a.best.unwrap_or_else(|| sibling(&a.out, "best.json"));
    save_stamped_json(&result.best, &best_path, &digest)?;
    let best = result.archive.global_best();
    print_json(&serde_json::json!({
        "task_id": task.id,
        "model": target.client().model().name,
        "best_id": best.candidate_id,
        "best_combined": best.combined,
        "records": result.archive.len(),
        "archive": a.out,
        "best_prompt": best_path,
        "trace": trace_path,
        "config_digest": digest,
    }));
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let pairs = load_pairs(&a.pairs)?;
    let source = cfg.model_id(ModelRole::Source)?;
    let target = cfg.model_id(ModelRole::Target)?;
    let mapping = match a.mode {
        AdapterMode::Summary => {
            let extractor = cfg.client(ModelRole::MappingExtractor)?;
            extract_mapping(&pairs, &source, &target, &extractor, cfg.clock())?
        }
        mode => {
            let adapter = cfg.model_id(ModelRole::Adapter)?;
            in_context_mapping(&pairs, mode, &source, &target, &adapter, cfg.clock())?
        }
    };
    save_stamped_json(&mapping, &a.out, &cfg.digest())?;
    print_json(&serde_json::json!({
        "source_model": mapping.source_model.name,
        "target_model": mapping.target_model.name,
        "pair_ids": mapping.pair_ids,
        "mapping": a.out,
    }));
    Ok(())
}

fn adapt(a: AdaptArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let mapping: TransferMapping = load_stamped_json(&a.mapping)?;
    mapping.validate()?;
    let source_prompt = load_prompt(&a.source_prompt, PromptOrigin::Manual)?;
    let template = match &a.template {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
            AdapterDomainTemplate::custom(a.domain, body).map_err(CliError::Domain)?
        }
        None => AdapterDomainTemplate::builtin(a.domain),
    };
    let from = match a.from {
        Some(f) => f,
        None => cfg.model_id(ModelRole::Source)?.name,
    };
    let to = match a.to {
        Some(t) => t,
        None => cfg.model_id(ModelRole::Target)?.name,
    };
    // Checked here as well so a wrong direction fails before any client is built.
    if mapping.source_model.name != from || mapping.target_model.name != to {
        return Err(TransferError::Direction {
            mapping_source: mapping.source_model.name,
            mapping_target: mapping.target_model.name,
            requested_source: from,
            requested_target: to,
        }
        .into());
    }
    let adapter = cfg.client(ModelRole::Adapter)?;
    let adapted = adapt_prompt(&source_prompt, &mapping, &template, &adapter, (&from, &to))?;
    save_stamped_json(&adapted, &a.out, &cfg.digest())?;
    print_json(&serde_json::json!({
        "prompt_id": adapted.id,
        "placeholders": adapted.placeholders,
        "out": a.out,
    }));
    Ok(())
}

fn find_prompt(dir: &Path, name: &str) -> Result<Option<PromptTemplate>, CliError> {
    for ext in ["json", "txt"] {
        let path = dir.join(format!("{name}.{ext}"));
        if path.is_file() {
            return Ok(Some(load_prompt(&path, PromptOrigin::Manual)?));
        }
    }
    Ok(None)
}

fn drift(a: DriftArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let task = load_task(&a.task)?;
    cfg.require(&cfg.drift.models)?;
    let mut models = Vec::new();
    let mut prompts = BTreeMap::new();
    for &role in &cfg.drift.models {
        let name = cfg.model_id(role)?.name;
        if let Some(p) = find_prompt(&a.prompts, &name)? {
            prompts.insert(name.clone(), p);
        }
        models.push(DriftModel {
            name,
            evaluator: cfg.evaluator(role, &task)?,
        });
    }
    let matrix = drift_matrix(&models, &prompts, &task, a.runs, cfg.drift.sample_size, cfg.evolution.rng_seed)?;
    for m in &models {
        let calls = m.evaluator.client().gateway().chat_calls();
        if all_failed(m.evaluator.model_failures(), calls) {
            return Err(CliError::Remote(format!("every call to model `{}` failed", m.name)));
        }
    }
    let digest = cfg.digest();
    write_atomic(&a.out.join("accuracy.csv"), matrix.accuracy_csv().as_bytes())?;
    write_atomic(&a.out.join("gap.csv"), matrix.gap_csv().as_bytes())?;
    save_stamped_json(&matrix, &a.out.join("drift.json"), &digest)?;
    print!("{}", matrix.gap_csv());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let task = load_task(&a.task)?;
    let prompt = load_prompt(&a.prompt, PromptOrigin::Manual)?;
    let evaluator = cfg.evaluator(a.model, &task)?;
    let batch = evaluator.evaluate_batch(&prompt, &task.instances, a.sample, cfg.evolution.rng_seed)?;
    if all_failed(evaluator.model_failures(), batch.outcomes.len() as u64) {
        return Err(CliError::Remote(format!(
            "every call to model `{}` failed",
            evaluator.client().model().name
        )));
    }
    let digest = cfg.digest();
    if let Some(out) = &a.out {
        save_stamped_json(&batch, out, &digest)?;
    }
    print_json(&serde_json::json!({
        "task_id": task.id,
        "prompt_id": prompt.id,
        "model": evaluator.client().model().name,
        "instances": batch.outcomes.len(),
        "pass_at_1": batch.pass_at_1,
        "mean_performance": batch.mean_performance,
        "mean_behavior": batch.mean_behavior,
        "config_digest": digest,
    }));
    Ok(())
}

fn write_matrix(out: &Path, name: &str, matrix: &SimilarityMatrix) -> Result<(), CliError> {
    write_atomic(&out.join(format!("{name}.csv")), matrix.to_csv().as_bytes())?;
    write_atomic(&out.join(format!("{name}_long.csv")), matrix.to_long_csv().as_bytes())?;
    Ok(())
}

fn deltas(a: DeltasArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let pairs: Vec<PromptPair> = load_pairs(&a.pairs)?
        .into_iter()
        .map(|p| PromptPair {
            label: p.task_id,
            source: p.source_prompt.body,
            target: p.target_prompt.body,
        })
        .collect();
    let matrix = semantic_deltas(&pairs, &cfg.client(ModelRole::Embedding)?)?;
    write_matrix(&a.out, "deltas", &matrix)?;
    save_stamped_json(&matrix, &a.out.join("deltas.json"), &cfg.digest())?;
    print!("{}", matrix.to_csv());
    Ok(())
}

fn run_text(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        if let Ok(m) = serde_json::from_str::<TransferMapping>(&text) {
            return Ok(m.summary);
        }
    }
    Ok(text)
}

fn consistency(a: ConsistencyArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let texts = a.inputs.iter().map(|p| run_text(p)).collect::<Result<Vec<_>, _>>()?;
    let report = consistency_report(&texts, &cfg.client(ModelRole::Embedding)?)?;
    write_matrix(&a.out, "consistency", &report.matrix)?;
    save_stamped_json(&report, &a.out.join("consistency.json"), &cfg.digest())?;
    print_json(&report.stats);
    Ok(())
}
