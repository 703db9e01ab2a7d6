//! Command-line front end for the benchmark pipeline.
//!
//! Five commands cover the flow: `ingest` validates a graph, `sample`
//! draws grounded queries, `generate` verbalizes them, `evaluate` runs a
//! completion client over the questions, and `report` renders score
//! tables. Settings come from an optional `key = value` file with
//! command-line flags taking precedence, so a run is reproducible from
//! the file plus the recorded seed alone.
//!
//! Exit codes: 0 success, 1 run failure, 2 usage or configuration error.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use folbench_core::artifact::{self, QuestionRecord, QUESTIONS_SCHEMA};
use folbench_core::catalog::Catalog;
use folbench_core::demo::SelectionStrategy;
use folbench_core::fixture;
use folbench_core::gateway::{
    CompletionClient, CorruptingClient, HttpClient, HttpClientConfig, OracleClient, PromptMode,
};
use folbench_core::kg::{KgFormat, KnowledgeGraph, NameMap};
use folbench_core::metrics::MatchConfig;
use folbench_core::pipeline::{
    self, EvaluateOptions, PipelineError, RunPaths, SampleOutcome, DEFAULT_POOL_PATTERNS,
};
use folbench_core::question::TemplateSet;
use folbench_core::sampler::SamplerConfig;

#[derive(Parser)]
#[command(name = "folbench", version, about = "Benchmark pipeline for logical reasoning over knowledge graphs")]
struct Cli {
    /// Settings file with `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a knowledge graph, printing its shape.
    Ingest(IngestArgs),
    /// Draw grounded queries for every catalog pattern.
    Sample(SampleArgs),
    /// Verbalize sampled queries into natural-language questions.
    Generate(GenerateArgs),
    /// Run a completion client over the questions and score answers.
    Evaluate(EvaluateArgs),
    /// Render score tables from evaluation records.
    Report(ReportArgs),
}

/// Flags shared by every command that loads a graph.
#[derive(Args, Clone)]
struct GraphArgs {
    /// Triple file path.
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Triple file layout: tsv-hrt or csv.
    #[arg(long)]
    format: Option<String>,
    /// Head column name (csv format).
    #[arg(long)]
    csv_head: Option<String>,
    /// Relation column name (csv format).
    #[arg(long)]
    csv_relation: Option<String>,
    /// Tail column name (csv format).
    #[arg(long)]
    csv_tail: Option<String>,
    /// Optional id-to-name substitution file.
    #[arg(long)]
    names: Option<PathBuf>,
    /// Use the built-in synthetic benchmark graph.
    #[arg(long)]
    fixture: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    graph: GraphArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Run directory receiving samples.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pattern catalog file; the built-in catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_answers: Option<usize>,
    #[arg(long)]
    max_answers: Option<usize>,
    #[arg(long)]
    max_retries_per_question: Option<usize>,
    #[arg(long)]
    questions_per_pattern: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relation template file; required unless --fixture supplies one.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Also emit operand questions for set-operation queries.
    #[arg(long)]
    subquestions: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Questions artifact; defaults to questions.jsonl in the run directory.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Records artifact; defaults to records-<mode>.jsonl in the run directory.
    #[arg(long)]
    records: Option<PathBuf>,
    /// mock-oracle, mock-corrupting, or http.
    #[arg(long)]
    client: Option<String>,
    /// Answers corrupted per question by the mock-corrupting client.
    #[arg(long)]
    corrupt: Option<usize>,
    /// Chain-of-thought prompting with reasoning demonstrations.
    #[arg(long)]
    cot: bool,
    /// Demonstrations per prompt; 2 plain, 4 chain-of-thought by default.
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Keep existing records, evaluating only what is missing.
    #[arg(long)]
    resume: bool,
    /// With --resume, also re-run questions whose record holds an error.
    #[arg(long)]
    retry_failed: bool,
    /// Demonstration choice: highest, random, or lowest similarity.
    #[arg(long)]
    strategy: Option<String>,
    /// Matching profile: general (0.90) or biomedical (0.97).
    #[arg(long)]
    profile: Option<String>,
    /// Override the profile's similarity threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated catalog indices forming the demonstration pool.
    #[arg(long)]
    pool_patterns: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API bearer token.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    requests_per_minute: Option<u32>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Records files; every records-*.jsonl in the run directory when omitted.
    #[arg(long)]
    records: Vec<PathBuf>,
    /// Operand-question records for the composite-versus-parts table.
    #[arg(long)]
    subrecords: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Run(String),
}

/// Write a line to stdout, exiting quietly when the reader has gone
/// away: report output is routinely piped into `head` or a pager, and
/// a closed pipe is not an error worth a panic.
fn say(text: &str) {
    say_raw(text);
    say_raw("\n");
}

fn say_raw(text: &str) {
    use std::io::Write;
    if let Err(e) = std::io::stdout().write_all(text.as_bytes()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("cannot write to stdout: {e}");
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> CliError {
        CliError::Run(format!("{e}"))
    }
}

/// Settings file contents. Keys mirror the long flag names.
#[derive(Default)]
struct Settings {
    values: HashMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "kg",
    "format",
    "csv-head",
    "csv-relation",
    "csv-tail",
    "names",
    "fixture",
    "out",
    "catalog",
    "seed",
    "min-answers",
    "max-answers",
    "max-retries-per-question",
    "questions-per-pattern",
    "templates",
    "subquestions",
    "questions",
    "records",
    "subrecords",
    "client",
    "corrupt",
    "cot",
    "shots",
    "workers",
    "resume",
    "retry-failed",
    "strategy",
    "profile",
    "threshold",
    "pool-patterns",
    "endpoint",
    "model",
    "api-key-env",
    "requests-per-minute",
    "timeout-secs",
    "max-retries",
    "temperature",
    "max-tokens",
];

impl Settings {
    fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read settings file {}: {e}", path.display()))
        })?;
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{} line {}: expected key = value",
                    path.display(),
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "{} line {}: unknown setting {key:?}",
                    path.display(),
                    i + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Settings { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if given, settings value otherwise, default last.
    fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(value) => Ok(value),
            None => match self.get(key) {
                Some(raw) => raw.parse().map_err(|e| {
                    CliError::Config(format!("setting {key} = {raw:?}: {e}"))
                }),
                None => Ok(default),
            },
        }
    }

    fn resolve_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(value) => Ok(Some(value)),
            None => match self.get(key) {
                Some(raw) => raw
                    .parse()
                    .map(Some)
                    .map_err(|e| CliError::Config(format!("setting {key} = {raw:?}: {e}"))),
                None => Ok(None),
            },
        }
    }

    fn resolve_path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.get(key).map(PathBuf::from))
    }

    fn resolve_string(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.get(key).map(str::to_string))
    }

    /// Boolean flags: present on the command line wins; otherwise the
    /// settings file may say true/false.
    fn resolve_flag(&self, set: bool, key: &str) -> Result<bool, CliError> {
        if set {
            return Ok(true);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Config(format!("setting {key} = {raw:?}: expected true or false"))),
            None => Ok(false),
        }
    }
}

fn require_out(settings: &Settings, flag: Option<PathBuf>) -> Result<RunPaths, CliError> {
    let out = settings
        .resolve_path(flag, "out")
        .ok_or_else(|| CliError::Config("an output directory is required (--out)".into()))?;
    Ok(RunPaths::new(out))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn kg_format(graph: &GraphArgs, settings: &Settings) -> Result<KgFormat, CliError> {
    let format = settings
        .resolve_string(graph.format.clone(), "format")
        .unwrap_or_else(|| "tsv-hrt".to_string());
    match format.as_str() {
        "tsv-hrt" => Ok(KgFormat::TsvHrt),
        "csv" => {
            let need = |flag: &Option<String>, key: &str| {
                settings.resolve_string(flag.clone(), key).ok_or_else(|| {
                    CliError::Config(format!("csv format needs the {key} column name"))
                })
            };
            Ok(KgFormat::CsvWithHeader {
                head: need(&graph.csv_head, "csv-head")?,
                relation: need(&graph.csv_relation, "csv-relation")?,
                tail: need(&graph.csv_tail, "csv-tail")?,
            })
        }
        other => Err(CliError::Config(format!(
            "unknown format {other:?}; expected tsv-hrt or csv"
        ))),
    }
}

/// Load the requested graph along with a settings echo describing it.
fn load_graph(
    graph: &GraphArgs,
    settings: &Settings,
) -> Result<(KnowledgeGraph, BTreeMap<String, String>), CliError> {
    let mut input_hashes = BTreeMap::new();
    if settings.resolve_flag(graph.fixture, "fixture")? {
        let kg = fixture::graph().map_err(PipelineError::from)?;
        input_hashes.insert("kg".to_string(), "builtin-fixture".to_string());
        return Ok((kg, input_hashes));
    }
    let path = settings
        .resolve_path(graph.kg.clone(), "kg")
        .ok_or_else(|| CliError::Config("a graph is required (--kg or --fixture)".into()))?;
    require_file(&path, "graph file")?;
    let format = kg_format(graph, settings)?;
    let name_map = match settings.resolve_path(graph.names.clone(), "names") {
        Some(names_path) => {
            require_file(&names_path, "name map")?;
            input_hashes.insert(
                "names".to_string(),
                artifact::hash_file(&names_path).map_err(PipelineError::from)?,
            );
            Some(NameMap::load(&names_path).map_err(PipelineError::from)?)
        }
        None => None,
    };
    input_hashes.insert(
        "kg".to_string(),
        artifact::hash_file(&path).map_err(PipelineError::from)?,
    );
    let kg = folbench_core::kg::load_triples(&path, &format, name_map.as_ref())
        .map_err(PipelineError::from)?;
    Ok((kg, input_hashes))
}

fn load_catalog(flag: Option<PathBuf>, settings: &Settings) -> Result<Catalog, CliError> {
    match settings.resolve_path(flag, "catalog") {
        Some(path) => {
            require_file(&path, "catalog")?;
            Catalog::load(&path).map_err(|e| CliError::Run(format!("{e}")))
        }
        None => Ok(Catalog::builtin()),
    }
}

fn cmd_ingest(args: IngestArgs, settings: &Settings) -> Result<(), CliError> {
    let (kg, _) = load_graph(&args.graph, settings)?;
    let stats = kg.stats();
    say(&format!("entities:  {}", stats.entities));
    say(&format!("relations: {}", stats.relations));
    say(&format!("triples:   {}", stats.triples));
    for (name, count) in &stats.per_relation {
        say(&format!("  {name}: {count}"));
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs, settings: &Settings) -> Result<(), CliError> {
    let paths = require_out(settings, args.out.clone())?;
    paths.ensure_dir()?;
    let (kg, input_hashes) = load_graph(&args.graph, settings)?;
    let catalog = load_catalog(args.catalog.clone(), settings)?;
    let seed: u64 = settings.resolve(args.seed, "seed", 0)?;
    let config = SamplerConfig {
        min_answers: settings.resolve(args.min_answers, "min-answers", 10)?,
        max_answers: settings.resolve(args.max_answers, "max-answers", 200)?,
        max_retries_per_question: settings.resolve(
            args.max_retries_per_question,
            "max-retries-per-question",
            500,
        )?,
        questions_per_pattern: settings.resolve(
            args.questions_per_pattern,
            "questions-per-pattern",
            100,
        )?,
        seed: pipeline::substream(seed, "sampling"),
    };
    let outcome = pipeline::stage_sample(&kg, &catalog, &config, input_hashes, &paths.samples())?;
    match outcome {
        SampleOutcome::Complete { written } => {
            say(&format!(
                "sampled {written} queries across {} patterns -> {}",
                catalog.patterns().len(),
                paths.samples().display()
            ));
            Ok(())
        }
        SampleOutcome::Shortfall { written, shortfalls } => {
            eprint!("{}", pipeline::render_shortfalls(&shortfalls));
            eprintln!("wrote {written} partial samples -> {}", paths.samples().display());
            Err(CliError::Run("sampling quota missed".into()))
        }
    }
}

fn cmd_generate(args: GenerateArgs, settings: &Settings) -> Result<(), CliError> {
    let paths = require_out(settings, args.out.clone())?;
    paths.ensure_dir()?;
    let (kg, _) = load_graph(&args.graph, settings)?;
    let fixture_graph = settings.resolve_flag(args.graph.fixture, "fixture")?;
    let templates = match settings.resolve_path(args.templates.clone(), "templates") {
        Some(path) => {
            require_file(&path, "template file")?;
            TemplateSet::load(&path).map_err(PipelineError::from)?
        }
        None if fixture_graph => fixture::templates().map_err(PipelineError::from)?,
        None => {
            return Err(CliError::Config(
                "a template file is required (--templates)".into(),
            ))
        }
    };
    for warning in templates.warnings() {
        eprintln!("template warning: {warning}");
    }
    require_file(&paths.samples(), "samples artifact")?;
    let subquestions = settings.resolve_flag(args.subquestions, "subquestions")?;
    let sub_path = paths.subquestions();
    let summary = pipeline::stage_generate(
        &kg,
        &templates,
        &paths.samples(),
        &paths.questions(),
        subquestions.then_some(sub_path.as_path()),
    )?;
    say(&format!(
        "generated {} questions -> {}",
        summary.questions,
        paths.questions().display()
    ));
    if subquestions {
        say(&format!(
            "generated {} operand questions -> {}",
            summary.subquestions,
            sub_path.display()
        ));
    }
    Ok(())
}

fn parse_pool_patterns(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad pool pattern index {part:?}")))
        })
        .collect()
}

fn build_match_config(
    args: &EvaluateArgs,
    settings: &Settings,
) -> Result<(MatchConfig<f64>, String), CliError> {
    let profile = settings
        .resolve_string(args.profile.clone(), "profile")
        .unwrap_or_else(|| "general".to_string());
    let mut config = match profile.as_str() {
        "general" => MatchConfig::general(),
        "biomedical" => MatchConfig::biomedical(),
        other => {
            return Err(CliError::Config(format!(
                "unknown profile {other:?}; expected general or biomedical"
            )))
        }
    };
    if let Some(threshold) = settings.resolve_opt(args.threshold, "threshold")? {
        config.threshold = threshold;
    }
    Ok((config, profile))
}

fn build_client(
    args: &EvaluateArgs,
    settings: &Settings,
    questions_path: &Path,
    seed: u64,
) -> Result<Box<dyn CompletionClient>, CliError> {
    let kind = settings
        .resolve_string(args.client.clone(), "client")
        .unwrap_or_else(|| "mock-oracle".to_string());
    match kind.as_str() {
        "mock-oracle" | "mock-corrupting" => {
            let (_, questions): (_, Vec<QuestionRecord>) =
                artifact::read_artifact(questions_path, QUESTIONS_SCHEMA)
                    .map_err(PipelineError::from)?;
            let mut oracle = OracleClient::new(HashMap::new());
            for q in &questions {
                oracle.insert(&q.text, &q.gold);
            }
            if kind == "mock-oracle" {
                Ok(Box::new(oracle))
            } else {
                let corrupt = settings.resolve(args.corrupt, "corrupt", 0)?;
                if corrupt > 10 {
                    return Err(CliError::Config(
                        "corrupt must be between 0 and 10".into(),
                    ));
                }
                Ok(Box::new(CorruptingClient::new(
                    oracle,
                    corrupt,
                    pipeline::substream(seed, "mock-corruption"),
                )))
            }
        }
        "http" => {
            let endpoint = settings
                .resolve_string(args.endpoint.clone(), "endpoint")
                .ok_or_else(|| CliError::Config("http client needs --endpoint".into()))?;
            let model = settings
                .resolve_string(args.model.clone(), "model")
                .ok_or_else(|| CliError::Config("http client needs --model".into()))?;
            let defaults = HttpClientConfig::default();
            let config = HttpClientConfig {
                endpoint,
                model,
                api_key_env: settings
                    .resolve_string(args.api_key_env.clone(), "api-key-env")
                    .unwrap_or(defaults.api_key_env),
                timeout: Duration::from_secs(settings.resolve(
                    args.timeout_secs,
                    "timeout-secs",
                    defaults.timeout.as_secs(),
                )?),
                max_retries: settings.resolve(args.max_retries, "max-retries", defaults.max_retries)?,
                requests_per_minute: settings.resolve(
                    args.requests_per_minute,
                    "requests-per-minute",
                    defaults.requests_per_minute,
                )?,
                temperature: settings.resolve(args.temperature, "temperature", defaults.temperature)?,
                max_tokens: settings.resolve(args.max_tokens, "max-tokens", defaults.max_tokens)?,
                retry_base: defaults.retry_base,
            };
            let client = HttpClient::new(config).map_err(|e| CliError::Config(format!("{e}")))?;
            Ok(Box::new(client))
        }
        other => Err(CliError::Config(format!(
            "unknown client {other:?}; expected mock-oracle, mock-corrupting, or http"
        ))),
    }
}

fn cmd_evaluate(args: EvaluateArgs, settings: &Settings) -> Result<(), CliError> {
    let paths = require_out(settings, args.out.clone())?;
    paths.ensure_dir()?;
    let questions_path = settings
        .resolve_path(args.questions.clone(), "questions")
        .unwrap_or_else(|| paths.questions());
    require_file(&questions_path, "questions artifact")?;

    let cot = settings.resolve_flag(args.cot, "cot")?;
    let default_shots = if cot { 4 } else { 2 };
    let shots = settings.resolve(args.shots, "shots", default_shots)?;
    let mode = if cot {
        PromptMode::Cot { shots }
    } else {
        PromptMode::Plain { shots }
    };
    let seed: u64 = settings.resolve(args.seed, "seed", 0)?;
    let (match_config, profile) = build_match_config(&args, settings)?;
    let strategy_name = settings
        .resolve_string(args.strategy.clone(), "strategy")
        .unwrap_or_else(|| "highest".to_string());
    let strategy = SelectionStrategy::parse(&strategy_name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown strategy {strategy_name:?}; expected highest, random, or lowest"
        ))
    })?;
    let pool_patterns = match settings.resolve_string(args.pool_patterns.clone(), "pool-patterns") {
        Some(raw) => parse_pool_patterns(&raw)?,
        None => DEFAULT_POOL_PATTERNS.to_vec(),
    };
    let options = EvaluateOptions {
        mode,
        match_config,
        profile_label: profile,
        workers: settings.resolve(args.workers, "workers", 1)?,
        resume: settings.resolve_flag(args.resume, "resume")?,
        retry_failed: settings.resolve_flag(args.retry_failed, "retry-failed")?,
        strategy,
        pool_patterns,
        seed,
        embedding_cache: Some(paths.embedding_cache()),
    };
    let records_path = settings
        .resolve_path(args.records.clone(), "records")
        .unwrap_or_else(|| paths.records(&options.mode.label()));
    let client = build_client(&args, settings, &questions_path, seed)?;
    let summary =
        pipeline::stage_evaluate(&questions_path, &records_path, client.as_ref(), &options)?;
    say(&format!(
        "evaluated {} questions ({} skipped, {} failed) -> {}",
        summary.evaluated,
        summary.skipped,
        summary.failed,
        records_path.display()
    ));
    say(&format!("mean precision@10: {:.4}", summary.mean_precision));
    Ok(())
}

fn cmd_report(args: ReportArgs, settings: &Settings) -> Result<(), CliError> {
    let paths = require_out(settings, args.out.clone())?;
    let mut records = args.records.clone();
    if records.is_empty() {
        if let Some(raw) = settings.get("records") {
            records.push(PathBuf::from(raw));
        }
    }
    if records.is_empty() {
        // Default: every records artifact in the run directory.
        let entries = std::fs::read_dir(&paths.out_dir).map_err(|e| {
            CliError::Config(format!("cannot list {}: {e}", paths.out_dir.display()))
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::Run(format!("{e}")))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with("records-") && name.ends_with(".jsonl") {
                records.push(entry.path());
            }
        }
        records.sort();
    }
    if records.is_empty() {
        return Err(CliError::Config(
            "no records files found; run evaluate first or pass --records".into(),
        ));
    }
    for path in &records {
        require_file(path, "records artifact")?;
    }
    let subrecords = settings.resolve_path(args.subrecords.clone(), "subrecords");
    if let Some(path) = &subrecords {
        require_file(path, "operand records artifact")?;
    }
    let catalog = Catalog::builtin();
    let summary = pipeline::stage_report(
        &records,
        subrecords.as_deref(),
        &catalog,
        &paths.report_txt(),
        &paths.report_csv(),
    )?;
    say_raw(&summary.text);
    say(&format!(
        "report written -> {} and {}",
        paths.report_txt().display(),
        paths.report_csv().display()
    ));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &settings),
        Command::Sample(args) => cmd_sample(args, &settings),
        Command::Generate(args) => cmd_generate(args, &settings),
        Command::Evaluate(args) => cmd_evaluate(args, &settings),
        Command::Report(args) => cmd_report(args, &settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("config error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Run(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
