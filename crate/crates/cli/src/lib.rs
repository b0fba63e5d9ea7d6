//! The `targen` command line: generate, correct, analyze, stats,
//! export-task and replay.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 backend
//! failure (including replay misses), 4 incomplete run with partial output
//! written.

pub mod backends;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Deserialize;
use thiserror::Error;

use targen_core::analysis::{
    analyze, label_distribution, AnalysisError, AnalysisOptions, EntityTag, Gazetteer, ModelFamilyConfig,
    SimilarityOptions,
};
use targen_core::instance::Dataset;
use targen_core::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use targen_core::schema::BalancePolicy;
use targen_core::selfcorrect::{self_correct_dataset, CorrectionOptions, SelfCorrectError};
use targen_core::store::{import_reference, read_dataset, write_atomic, write_dataset, KeyMap, StoreError};
use targen_core::taskpacks::{builtin_task, load_task, TaskPack, TaskPackError};

use backends::BackendChoice;
use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Incomplete(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Incomplete(_) => 4,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(error: StoreError) -> Self {
        match error {
            StoreError::Io { .. } => CliError::Io(error.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TaskPackError> for CliError {
    fn from(error: TaskPackError) -> Self {
        match error {
            TaskPackError::Io { .. } => CliError::Io(error.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(error: AnalysisError) -> Self {
        CliError::Validation(error.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "targen", version, about = "Seedless synthetic dataset generation")]
pub struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run contexts, seeds and instance generation.
    Generate(GenerateArgs),
    /// Re-check every label with the self-correction prompt.
    Correct(CorrectArgs),
    /// Write a quality report for a dataset.
    Analyze(AnalyzeArgs),
    /// Summarize a dataset file.
    Stats(StatsArgs),
    /// Write a built-in task as an editable spec file.
    ExportTask(ExportArgs),
    /// Regenerate a dataset from a recorded transcript, without network.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// live, mock:<script.json> or replay:<transcript.jsonl>.
    #[arg(long)]
    pub backend: Option<String>,
    /// Append every exchange to this transcript.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Requests in flight at once.
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GenerateArgs {
    /// Built-in task id or spec file.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long)]
    pub contexts: Option<usize>,
    #[arg(long)]
    pub seeds_per_context: Option<usize>,
    /// Explicit label counts, e.g. `contradiction=119,entailment=115,neutral=16`.
    #[arg(long)]
    pub labels: Option<String>,
    /// balanced or alternating.
    #[arg(long)]
    pub balance: Option<String>,
    #[arg(long)]
    pub per_seed_capacity: Option<usize>,
    #[arg(long)]
    pub parse_retries: Option<usize>,
    #[arg(long)]
    pub context_budget: Option<usize>,
    /// Fail when a context yields no seeds.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to `<out>.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from the checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Pin timestamps so repeated runs give identical files.
    #[arg(long)]
    pub reproducible: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ReplayArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    #[command(flatten)]
    pub generate: GenerateArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CorrectArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Task id or spec file; defaults to the dataset's built-in task.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confusion matrix CSV.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Re-asks after an unusable verdict.
    #[arg(long)]
    pub max_retries: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Reference dataset: a targen file or generic JSON lines.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// TOML key map for a generic reference file.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Task used to read a generic reference; defaults to the dataset's.
    #[arg(long)]
    pub task: Option<String>,
    /// JSON report; printed when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `TAG=file` (bare lines take TAG) or `file` of `surface<TAB>TAG` lines.
    #[arg(long)]
    pub gazetteer: Vec<String>,
    /// Tags to report; defaults to every tag in the gazetteers.
    #[arg(long)]
    pub tag: Vec<String>,
    /// Comma-separated fields to analyse; all fields by default.
    #[arg(long)]
    pub fields: Option<String>,
    #[arg(long)]
    pub max_pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave identical texts out of the similarity pairs.
    #[arg(long)]
    pub skip_identical: bool,
    #[arg(long)]
    pub no_pvi: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ExportArgs {
    pub task: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns its
/// exit code.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(error) => {
            let _ = error.print();
            return ExitCode::from(if error.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Generate(args) => generate(args, None, &config),
        Command::Replay(args) => {
            if args.generate.run.backend.is_some() {
                return Err(CliError::Validation("replay takes --transcript, not --backend".into()));
            }
            generate(&args.generate, Some(&args.transcript), &config)
        }
        Command::Correct(args) => correct(args, &config),
        Command::Analyze(args) => analyze_command(args, &config),
        Command::Stats(args) => stats(args),
        Command::ExportTask(args) => export_task(args),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Validation(format!("--{flag} is required")))
}

fn parse_label_counts(text: &str) -> Result<BalancePolicy, CliError> {
    let counts = text
        .split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (label, count) = part
                .rsplit_once('=')
                .ok_or_else(|| CliError::Validation(format!("label count \"{part}\" is not label=count")))?;
            let count = count
                .trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("label count \"{part}\" is not label=count")))?;
            Ok((label.trim().to_string(), count))
        })
        .collect::<Result<Vec<(String, usize)>, CliError>>()?;
    Ok(BalancePolicy::Explicit(counts))
}

fn default_checkpoint(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".checkpoint");
    out.with_file_name(name)
}

fn backend_for(
    run: &RunArgs,
    forced: Option<BackendChoice>,
    config: &Config,
    section: &str,
    concurrency: usize,
) -> Result<Box<dyn targen_core::backend::Backend>, CliError> {
    let choice = match forced {
        Some(choice) => choice,
        None => BackendChoice::parse(&required(config.pick(run.backend.clone(), section, "backend")?, "backend")?)?,
    };
    let record = config.pick(run.record.clone(), section, "record")?;
    backends::build(&choice, record.as_deref(), config, section, concurrency)
}

fn generate(args: &GenerateArgs, transcript: Option<&Path>, config: &Config) -> Result<(), CliError> {
    let section = "generate";
    let pack = load_task(&required(config.pick(args.task.clone(), section, "task")?, "task")?)?;
    let out: PathBuf = required(config.pick(args.out.clone(), section, "out")?, "out")?;
    let total = match config.pick(args.total, section, "total")? {
        Some(total) => total,
        None => pack.spec.label_schema.len().max(1),
    };
    let mut pipeline = PipelineConfig::with_total(total);
    pipeline.contexts = config.pick(args.contexts, section, "contexts")?;
    pipeline.seeds_per_context = config.pick(args.seeds_per_context, section, "seeds_per_context")?;
    pipeline.per_seed_capacity = config.pick(args.per_seed_capacity, section, "per_seed_capacity")?;
    if let Some(retries) = config.pick(args.parse_retries, section, "parse_retries")? {
        pipeline.parse_retries = retries;
    }
    if let Some(budget) = config.pick(args.context_budget, section, "context_budget")? {
        pipeline.context_budget = budget;
    }
    pipeline.policy = match (
        config.pick(args.labels.clone(), section, "labels")?,
        config.pick(args.balance.clone(), section, "balance")?,
    ) {
        (Some(counts), _) => Some(parse_label_counts(&counts)?),
        (None, Some(b)) if b == "balanced" => Some(BalancePolicy::Balanced),
        (None, Some(b)) if b == "alternating" => Some(BalancePolicy::Alternating),
        (None, Some(b)) => return Err(CliError::Validation(format!("balance \"{b}\" is not balanced or alternating"))),
        (None, None) => None,
    };
    pipeline.strict = args.strict || config.get(section, "strict")?.unwrap_or(false);
    pipeline.reproducible = args.reproducible || config.get(section, "reproducible")?.unwrap_or(false);
    pipeline.resume = args.resume;
    pipeline.concurrency = config.pick(args.run.concurrency, section, "concurrency")?.unwrap_or(1).max(1);
    if let Some(every) = config.pick(args.checkpoint_every, section, "checkpoint_every")? {
        pipeline.checkpoint_every = every;
    }
    let explicit_checkpoint = config.pick(args.checkpoint.clone(), section, "checkpoint")?;
    let checkpoint = explicit_checkpoint.clone().unwrap_or_else(|| default_checkpoint(&out));
    pipeline.checkpoint = Some(checkpoint.clone());
    if let Some(model) = config.pick(args.run.model.clone(), section, "model")? {
        pipeline.decoding.model = model;
    }
    if let Some(t) = config.pick(args.run.temperature, section, "temperature")? {
        pipeline.decoding.generation_temperature = t;
    }
    if let Some(m) = config.pick(args.run.max_tokens, section, "max_tokens")? {
        pipeline.decoding.max_tokens = m;
    }

    let forced = transcript.map(|t| BackendChoice::Replay(t.display().to_string()));
    let backend = backend_for(&args.run, forced, config, section, pipeline.concurrency)?;
    info!("generating {total} {} instances with {}", pack.spec.task_id, backend.id());
    match run_pipeline(&pack, backend.as_ref(), &pipeline) {
        Ok(dataset) => {
            write_dataset(&out, &dataset)?;
            if explicit_checkpoint.is_none() && checkpoint.exists() {
                std::fs::remove_file(&checkpoint).map_err(|e| CliError::Io(format!("{}: {e}", checkpoint.display())))?;
            }
            eprintln!("wrote {} instances to {}", dataset.len(), out.display());
            Ok(())
        }
        Err(PipelineError::PlanUnfulfilled {
            missing,
            dataset: Some(dataset),
            ..
        }) => {
            write_dataset(&out, &dataset)?;
            Err(CliError::Incomplete(format!(
                "plan unfulfilled: {missing} planned instances missing; wrote {} instances to {}",
                dataset.len(),
                out.display()
            )))
        }
        Err(error @ (PipelineError::BudgetExhausted { .. } | PipelineError::NoSeeds { .. } | PipelineError::PlanUnfulfilled { .. })) => {
            Err(CliError::Incomplete(format!(
                "{error}; progress saved to {} (rerun with --resume)",
                checkpoint.display()
            )))
        }
        Err(PipelineError::Backend { step, source }) => Err(CliError::Backend(format!(
            "{step}: {source}; progress saved to {} (rerun with --resume)",
            checkpoint.display()
        ))),
        Err(other) => Err(CliError::Validation(other.to_string())),
    }
}

fn pack_for(task: Option<String>, dataset: &Dataset) -> Result<TaskPack, CliError> {
    match task {
        Some(task) => Ok(load_task(&task)?),
        None => builtin_task(dataset.task_id()).map_err(|_| {
            CliError::Validation(format!(
                "task \"{}\" is not built in; pass --task with its spec file",
                dataset.task_id()
            ))
        }),
    }
}

fn correct(args: &CorrectArgs, config: &Config) -> Result<(), CliError> {
    let section = "correct";
    let input: PathBuf = required(config.pick(args.input.clone(), section, "in")?, "in")?;
    let out: PathBuf = required(config.pick(args.out.clone(), section, "out")?, "out")?;
    let dataset = read_dataset(&input)?;
    let pack = pack_for(config.pick(args.task.clone(), section, "task")?, &dataset)?;
    if pack.content_hash() != dataset.manifest().task_hash {
        warn!("task spec differs from the one {} was generated with", input.display());
    }
    let mut options = CorrectionOptions {
        decoding: dataset.manifest().decoding.clone(),
        max_retries: config.pick(args.max_retries, section, "max_retries")?,
        concurrency: config.pick(args.run.concurrency, section, "concurrency")?.unwrap_or(1).max(1),
    };
    if let Some(model) = config.pick(args.run.model.clone(), section, "model")? {
        options.decoding.model = model;
    }
    if let Some(t) = config.pick(args.run.temperature, section, "temperature")? {
        options.decoding.correction_temperature = t;
    }
    if let Some(m) = config.pick(args.run.max_tokens, section, "max_tokens")? {
        options.decoding.max_tokens = m;
    }
    let backend = backend_for(&args.run, None, config, section, options.concurrency)?;
    match self_correct_dataset(&pack, backend.as_ref(), dataset, &options) {
        Ok((corrected, matrix)) => {
            write_dataset(&out, &corrected)?;
            if let Some(path) = config.pick(args.matrix.clone(), section, "matrix")? {
                write_atomic(&path, matrix.to_csv().as_bytes())?;
            }
            eprintln!(
                "checked {} instances: {} relabeled, {} unverified; wrote {}",
                corrected.len(),
                matrix.relabeled_total(),
                matrix.unverified_total(),
                out.display()
            );
            Ok(())
        }
        Err(SelfCorrectError::Backend { done, source, partial }) => {
            write_dataset(&out, &partial)?;
            Err(CliError::Backend(format!(
                "{source}; {done} instances checked, partial dataset written to {}",
                out.display()
            )))
        }
        Err(SelfCorrectError::Instance(e)) => Err(CliError::Validation(e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
struct MapFile {
    #[serde(default)]
    fields: BTreeMap<String, String>,
    label: Option<String>,
    #[serde(default)]
    label_values: Vec<String>,
}

fn load_key_map(path: &Path) -> Result<KeyMap, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file: MapFile = toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(KeyMap {
        fields: file.fields.into_iter().collect(),
        label: file.label.unwrap_or_else(|| "label".into()),
        label_values: file.label_values,
    })
}

fn load_gazetteers(specs: &[String]) -> Result<Option<Gazetteer>, CliError> {
    if specs.is_empty() {
        return Ok(None);
    }
    let mut gazetteer = Gazetteer::new();
    for spec in specs {
        let (tag, path) = match spec.split_once('=') {
            Some((tag, path)) => (Some(tag.parse::<EntityTag>()?), path),
            None => (None, spec.as_str()),
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
        let parsed = Gazetteer::parse(&text, tag).map_err(|e| CliError::Validation(format!("{path}: {e}")))?;
        gazetteer.merge(parsed);
    }
    Ok(Some(gazetteer))
}

fn analyze_command(args: &AnalyzeArgs, config: &Config) -> Result<(), CliError> {
    let section = "analyze";
    let input: PathBuf = required(config.pick(args.input.clone(), section, "in")?, "in")?;
    let dataset = read_dataset(&input)?;
    let reference = match config.pick(args.reference.clone(), section, "reference")? {
        Some(path) => {
            let pack = pack_for(config.pick(args.task.clone(), section, "task")?, &dataset)?;
            let map = config.pick(args.map.clone(), section, "map")?.map(|p| load_key_map(&p)).transpose()?;
            Some(import_reference(&path, &pack, map.as_ref())?)
        }
        None => None,
    };
    let gazetteer_specs = if args.gazetteer.is_empty() {
        config.get::<Vec<String>>(section, "gazetteer")?.unwrap_or_default()
    } else {
        args.gazetteer.clone()
    };
    let gazetteer = load_gazetteers(&gazetteer_specs)?;
    let tags: Vec<EntityTag> = if args.tag.is_empty() {
        gazetteer.as_ref().map(|g| g.tags().into_iter().collect()).unwrap_or_default()
    } else {
        args.tag.iter().map(|t| t.parse()).collect::<Result<_, _>>()?
    };
    let fields: Vec<String> = config
        .pick(args.fields.clone(), section, "fields")?
        .map(|f| f.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default();
    for field in &fields {
        if !dataset.manifest().fields.contains(field) {
            return Err(CliError::Validation(format!(
                "field \"{field}\" is not one of {}",
                dataset.manifest().fields.join(", ")
            )));
        }
    }
    let seed = config.pick(args.seed, section, "seed")?.unwrap_or(0);
    let mut pvi: ModelFamilyConfig = config.table(section, "pvi")?;
    pvi.seed = seed;
    let no_pvi = args.no_pvi || config.get(section, "no_pvi")?.unwrap_or(false);
    let options = AnalysisOptions {
        fields,
        similarity: SimilarityOptions {
            max_pairs: config
                .pick(args.max_pairs, section, "max_pairs")?
                .unwrap_or(SimilarityOptions::default().max_pairs),
            seed,
            skip_identical: args.skip_identical || config.get(section, "skip_identical")?.unwrap_or(false),
        },
        pvi: (!no_pvi).then_some(pvi),
        tagger: gazetteer.map(|g| Box::new(g) as Box<dyn targen_core::analysis::EntityTagger>),
        tags,
        ..AnalysisOptions::default()
    };
    let report = analyze(&dataset, reference.as_ref(), &options)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match config.pick(args.report.clone(), section, "report")? {
        Some(path) => {
            write_atomic(&path, json.as_bytes())?;
            eprintln!("wrote report for {} instances to {}", report.instances, path.display());
        }
        None => print!("{json}"),
    }
    Ok(())
}

/// Plain-text summary of a dataset.
pub fn render_stats(dataset: &Dataset) -> String {
    let manifest = dataset.manifest();
    let labels = label_distribution(dataset);
    let mut out = String::new();
    let steps = &manifest.steps;
    let done: Vec<&str> = [
        ("contexts", steps.contexts),
        ("seeds", steps.seeds),
        ("instances", steps.instances),
        ("correction", steps.correction),
    ]
    .iter()
    .filter(|(_, d)| *d)
    .map(|(n, _)| *n)
    .collect();
    let _ = writeln!(out, "task      {}", manifest.task_id);
    let _ = writeln!(out, "run       {} ({})", manifest.run_id, manifest.backend_id);
    let _ = writeln!(out, "instances {} of {} planned", dataset.len(), manifest.total);
    let _ = writeln!(out, "steps     {}", if done.is_empty() { "none".to_string() } else { done.join(", ") });
    let width = labels.original.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(out, "{:width$}  {:>8}  {:>8}  {:>8}", "label", "target", "original", "final");
    for (original, fin) in labels.original.iter().zip(&labels.corrected) {
        let target = manifest
            .targets
            .iter()
            .find(|t| t.label == original.label)
            .map_or(String::from("-"), |t| t.count.to_string());
        let _ = writeln!(
            out,
            "{:width$}  {:>8}  {:>8}  {:>8}",
            original.label, target, original.count, fin.count
        );
    }
    if let Some(matrix) = &manifest.confusion {
        let _ = writeln!(
            out,
            "corrected {} relabeled, {} unverified",
            matrix.relabeled_total(),
            matrix.unverified_total()
        );
    }
    out
}

fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.input)?;
    if args.json {
        let value = serde_json::json!({
            "task": dataset.task_id(),
            "run_id": dataset.manifest().run_id,
            "instances": dataset.len(),
            "total": dataset.manifest().total,
            "steps": dataset.manifest().steps,
            "labels": label_distribution(&dataset),
            "confusion": dataset.manifest().confusion,
        });
        println!("{}", serde_json::to_string_pretty(&value).expect("stats serialize"));
    } else {
        print!("{}", render_stats(&dataset));
    }
    Ok(())
}

fn export_task(args: &ExportArgs) -> Result<(), CliError> {
    let pack = builtin_task(&args.task)?;
    let text = pack.to_spec_file();
    match &args.out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            eprintln!("wrote {} to {}", pack.spec.task_id, path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_counts() {
        assert_eq!(
            parse_label_counts("contradiction=119, entailment=115,neutral=16").unwrap(),
            BalancePolicy::Explicit(vec![
                ("contradiction".into(), 119),
                ("entailment".into(), 115),
                ("neutral".into(), 16)
            ])
        );
        assert!(parse_label_counts("a=1,b").is_err());
    }

    #[test]
    fn checkpoint_beside_output() {
        assert_eq!(default_checkpoint(Path::new("out/rte.jsonl")), PathBuf::from("out/rte.jsonl.checkpoint"));
    }

    #[test]
    fn parses_documented_commands() {
        let cli = Cli::try_parse_from([
            "targen", "generate", "--task", "rte", "--total", "20", "--contexts", "2", "--seeds-per-context", "3",
            "--backend", "mock:m.json", "--record", "t.jsonl", "--out", "o.jsonl",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Generate(ref g) if g.total == Some(20)));
        for args in [
            vec!["targen", "correct", "--in", "a", "--backend", "live", "--out", "b", "--matrix", "m.csv"],
            vec!["targen", "analyze", "--in", "a", "--reference", "r", "--report", "x.json", "--gazetteer", "GPE=g.txt"],
            vec!["targen", "stats", "--in", "a"],
            vec!["targen", "export-task", "cb", "--out", "cb.toml"],
            vec!["targen", "replay", "--transcript", "t.jsonl", "--task", "rte", "--out", "o.jsonl"],
        ] {
            Cli::try_parse_from(args.clone()).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }
}
