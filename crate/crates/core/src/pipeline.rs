//! Stage orchestration: sample, generate, evaluate, report.
//!
//! Each stage reads the previous stage's artifact, validates its schema
//! tag, and writes its own with a full reproducibility header. All
//! randomness flows from one run seed through named sub-streams, so two
//! runs with the same seed and inputs produce byte-identical sample and
//! generate artifacts regardless of what else changed on the machine.
//!
//! Evaluation is the only concurrent stage: questions fan out to a
//! bounded worker pool, each worker deriving its demonstration rng from
//! the question id rather than from arrival order, so worker count
//! changes throughput but never results.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::artifact::{
    self, ArtifactError, QuestionRecord, RunMeta, SampleRecord, QUESTIONS_SCHEMA, RECORDS_SCHEMA,
    SAMPLES_SCHEMA,
};
use crate::catalog::{Catalog, CatalogError};
use crate::demo::{self, DemoError, DemoPool, HashEmbedder, PoolQuestion, SelectionStrategy};
use crate::formula::Family;
use crate::gateway::{
    self, CompletionClient, GatewayError, PromptMode, RationaleSet,
};
use crate::kg::{KgError, KgFormat, KnowledgeGraph};
use crate::metrics::{
    self, Cell, EvalRecord, MatchConfig, MetricsError, SetOpResult,
};
use crate::question::{self, QuestionError, TemplateSet};
use crate::sampler::{self, PatternShortfall, SamplerConfig, SamplerError};
use crate::Score;

/// Pool composition default: single- and double-hop projections plus
/// the binary intersections and unions over them.
pub const DEFAULT_POOL_PATTERNS: [usize; 6] = [0, 1, 6, 7, 12, 13];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Question(#[from] QuestionError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot resume {path}: {field} differs from the original run")]
    ResumeMismatch { path: String, field: String },
    #[error("{0}")]
    BadOptions(String),
}

/// Standard artifact locations inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out_dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: impl Into<PathBuf>) -> RunPaths {
        RunPaths { out_dir: out_dir.into() }
    }

    pub fn ensure_dir(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.out_dir).map_err(|source| PipelineError::Io {
            path: self.out_dir.display().to_string(),
            source,
        })
    }

    pub fn samples(&self) -> PathBuf {
        self.out_dir.join("samples.jsonl")
    }

    pub fn questions(&self) -> PathBuf {
        self.out_dir.join("questions.jsonl")
    }

    pub fn subquestions(&self) -> PathBuf {
        self.out_dir.join("subquestions.jsonl")
    }

    /// One records file per prompt regime, e.g. `records-plain-2-shot.jsonl`.
    pub fn records(&self, mode_label: &str) -> PathBuf {
        self.out_dir.join(format!("records-{mode_label}.jsonl"))
    }

    pub fn report_txt(&self) -> PathBuf {
        self.out_dir.join("report.txt")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.out_dir.join("report.csv")
    }

    pub fn embedding_cache(&self) -> PathBuf {
        self.out_dir.join("embedding-cache")
    }
}

/// Derive a named random sub-stream from the run seed, so sampling,
/// demonstration choice, and mock corruption never share a stream.
pub fn substream(seed: u64, name: &str) -> u64 {
    seed ^ gateway::fnv1a(name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub per_relation: Vec<(String, usize)>,
}

/// Load and validate a graph, returning it with its headline counts.
pub fn stage_ingest(
    path: &Path,
    format: &KgFormat,
    name_map: Option<&crate::kg::NameMap>,
) -> Result<(KnowledgeGraph, IngestSummary), PipelineError> {
    let kg = crate::kg::load_triples(path, format, name_map)?;
    let stats = kg.stats();
    let summary = IngestSummary {
        entities: stats.entities,
        relations: stats.relations,
        triples: stats.triples,
        per_relation: stats.per_relation,
    };
    Ok((kg, summary))
}

#[derive(Debug)]
pub enum SampleOutcome {
    Complete { written: usize },
    /// Quota missed; partial samples were still written so the failure
    /// is inspectable.
    Shortfall {
        written: usize,
        shortfalls: Vec<PatternShortfall>,
    },
}

fn sampler_config_echo(config: &SamplerConfig) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("min-answers".into(), config.min_answers.to_string());
    map.insert("max-answers".into(), config.max_answers.to_string());
    map.insert(
        "max-retries-per-question".into(),
        config.max_retries_per_question.to_string(),
    );
    map.insert(
        "questions-per-pattern".into(),
        config.questions_per_pattern.to_string(),
    );
    map.insert("seed".into(), config.seed.to_string());
    map
}

/// Draw the benchmark's grounded queries and write `samples.jsonl`.
pub fn stage_sample(
    kg: &KnowledgeGraph,
    catalog: &Catalog,
    config: &SamplerConfig,
    input_hashes: BTreeMap<String, String>,
    out_path: &Path,
) -> Result<SampleOutcome, PipelineError> {
    let (samples, shortfalls) = match sampler::sample_benchmark(kg, catalog, config) {
        Ok(samples) => (samples, Vec::new()),
        Err(SamplerError::Shortfall { shortfalls, samples }) => (samples, shortfalls),
        Err(other) => return Err(other.into()),
    };
    let meta = RunMeta::new(SAMPLES_SCHEMA, config.seed, sampler_config_echo(config), input_hashes);
    let mut records = Vec::with_capacity(samples.len());
    for sample in &samples {
        records.push(SampleRecord::from_sample(kg, sample)?);
    }
    artifact::write_artifact(out_path, &meta, &records)?;
    if shortfalls.is_empty() {
        Ok(SampleOutcome::Complete { written: records.len() })
    } else {
        Ok(SampleOutcome::Shortfall { written: records.len(), shortfalls })
    }
}

/// Human-readable shortfall listing, one line per missed pattern.
pub fn render_shortfalls(shortfalls: &[PatternShortfall]) -> String {
    let mut out = String::from("sampling quota missed:\n");
    for s in shortfalls {
        out.push_str(&format!(
            "  pattern {:>2} {:<40} got {:>3} of {}\n",
            s.pattern_index, s.formula, s.got, s.want
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub questions: usize,
    pub subquestions: usize,
}

/// Verbalize every sample into a question artifact. With
/// `subquestions_path` set, additionally split each decomposable
/// set-operation query into its two operand questions for the
/// composite-versus-parts comparison.
pub fn stage_generate(
    kg: &KnowledgeGraph,
    templates: &TemplateSet,
    samples_path: &Path,
    questions_path: &Path,
    subquestions_path: Option<&Path>,
) -> Result<GenerateSummary, PipelineError> {
    let (samples_meta, samples): (RunMeta, Vec<SampleRecord>) =
        artifact::read_artifact(samples_path, SAMPLES_SCHEMA)?;

    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("samples".to_string(), artifact::hash_file(samples_path)?);
    let mut config = BTreeMap::new();
    config.insert("samples-config-hash".to_string(), samples_meta.config_hash.clone());
    config.insert(
        "subquestions".to_string(),
        subquestions_path.is_some().to_string(),
    );
    let meta = RunMeta::new(QUESTIONS_SCHEMA, samples_meta.seed, config, input_hashes);

    let mut per_pattern: BTreeMap<usize, usize> = BTreeMap::new();
    let mut questions = Vec::with_capacity(samples.len());
    let mut subquestions = Vec::new();
    for sample in &samples {
        let ordinal = per_pattern.entry(sample.pattern_index).or_insert(0);
        let question_id = format!("q{:02}-{:03}", sample.pattern_index, ordinal);
        *ordinal += 1;
        let grounded = sample.to_grounded(kg)?;
        let generated = question::verbalize(kg, &grounded, templates)?;
        questions.push(QuestionRecord::from_question(
            kg,
            question_id.clone(),
            sample.pattern_index,
            &sample.seed_entity,
            &generated,
        )?);
        if subquestions_path.is_some() {
            if let Ok((left, right)) = question::decompose_set_op(&grounded) {
                for (part, side) in [(left, "left"), (right, "right")] {
                    let sub = question::verbalize(kg, &part, templates)?;
                    subquestions.push(QuestionRecord::from_question(
                        kg,
                        format!("{question_id}.{side}"),
                        sample.pattern_index,
                        &sample.seed_entity,
                        &sub,
                    )?);
                }
            }
        }
    }
    artifact::write_artifact(questions_path, &meta, &questions)?;
    if let Some(path) = subquestions_path {
        artifact::write_artifact(path, &meta, &subquestions)?;
    }
    Ok(GenerateSummary {
        questions: questions.len(),
        subquestions: subquestions.len(),
    })
}

/// Evaluation settings beyond the client itself.
#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub mode: PromptMode,
    pub match_config: MatchConfig<Score>,
    /// Label echoed into artifacts and the report, e.g. "general".
    pub profile_label: String,
    pub workers: usize,
    /// Keep existing records and only evaluate what is missing.
    pub resume: bool,
    /// With `resume`, also re-run questions whose record has an error.
    pub retry_failed: bool,
    pub strategy: SelectionStrategy,
    pub pool_patterns: Vec<usize>,
    pub seed: u64,
    pub embedding_cache: Option<PathBuf>,
}

impl EvaluateOptions {
    pub fn offline_defaults(seed: u64) -> EvaluateOptions {
        EvaluateOptions {
            mode: PromptMode::Plain { shots: 2 },
            match_config: MatchConfig::general(),
            profile_label: "general".to_string(),
            workers: 1,
            resume: false,
            retry_failed: false,
            strategy: SelectionStrategy::Highest,
            pool_patterns: DEFAULT_POOL_PATTERNS.to_vec(),
            seed,
            embedding_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub total_questions: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub failed: usize,
    pub mean_precision: Score,
}

fn evaluate_config_echo(options: &EvaluateOptions, client: &dyn CompletionClient) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("mode".into(), options.mode.label());
    map.insert("threshold".into(), format!("{:.2}", options.match_config.threshold));
    map.insert("prefix-scale".into(), format!("{}", options.match_config.prefix_scale));
    map.insert("max-prefix".into(), options.match_config.max_prefix.to_string());
    map.insert("profile".into(), options.profile_label.clone());
    map.insert("client".into(), client.describe());
    map.insert("strategy".into(), options.strategy.as_str().to_string());
    map.insert(
        "pool-patterns".into(),
        options
            .pool_patterns
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    map.insert("seed".into(), options.seed.to_string());
    map
}

/// Read a records artifact, keeping the last record per question id so
/// resumed runs with re-tried questions read back cleanly.
pub fn read_records(
    path: &Path,
) -> Result<(RunMeta, Vec<EvalRecord<Score>>), PipelineError> {
    let (meta, raw): (RunMeta, Vec<EvalRecord<Score>>) =
        artifact::read_artifact(path, RECORDS_SCHEMA)?;
    let mut order: Vec<String> = Vec::new();
    let mut latest: HashMap<String, EvalRecord<Score>> = HashMap::new();
    for record in raw {
        if !latest.contains_key(&record.question_id) {
            order.push(record.question_id.clone());
        }
        latest.insert(record.question_id.clone(), record);
    }
    let records = order
        .into_iter()
        .map(|id| latest.remove(&id).expect("id recorded on first sight"))
        .collect();
    Ok((meta, records))
}

fn build_demo_pool(
    questions: &[QuestionRecord],
    options: &EvaluateOptions,
    rationales: &RationaleSet,
) -> Result<DemoPool<Score>, PipelineError> {
    let wanted: HashSet<usize> = options.pool_patterns.iter().copied().collect();
    let mut pool_questions = Vec::new();
    for q in questions {
        if !wanted.contains(&q.pattern_index) {
            continue;
        }
        let family = Family::parse(&q.family)
            .ok_or_else(|| PipelineError::BadOptions(format!("unknown family {:?}", q.family)))?;
        pool_questions.push(PoolQuestion {
            question: q.text.clone(),
            answers: q.gold.iter().take(10).cloned().collect(),
            rationale: Some(rationales.get(family).to_string()),
            pattern: q.formula.clone(),
            category: q.family.clone(),
        });
    }
    let provider = HashEmbedder::default();
    Ok(demo::build_pool(
        &pool_questions,
        &provider,
        options.embedding_cache.as_deref(),
    )?)
}

fn error_record(q: &QuestionRecord, mode_label: &str, message: String) -> EvalRecord<Score> {
    EvalRecord {
        question_id: q.question_id.clone(),
        pattern_index: q.pattern_index,
        mode: mode_label.to_string(),
        raw_output: String::new(),
        extracted: Vec::new(),
        gold: q.gold.clone(),
        matches: Vec::new(),
        precision: 0.0,
        error: Some(message),
    }
}

fn evaluate_one(
    q: &QuestionRecord,
    pool: &DemoPool<Score>,
    client: &dyn CompletionClient,
    options: &EvaluateOptions,
    mode_label: &str,
) -> EvalRecord<Score> {
    let k = options.mode.shots();
    let provider = HashEmbedder::default();
    let demos = if k == 0 {
        Vec::new()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(
            substream(options.seed, "demo-random") ^ gateway::fnv1a(&q.question_id),
        );
        match demo::select(pool, &provider, &q.text, k, options.strategy, &mut rng) {
            Ok(mut demos) => {
                if !options.mode.is_cot() {
                    for demo in &mut demos {
                        demo.rationale = None;
                    }
                }
                demos
            }
            Err(e) => return error_record(q, mode_label, format!("demo selection: {e}")),
        }
    };
    let prompt = match gateway::build_prompt(&q.text, &demos, options.mode) {
        Ok(prompt) => prompt,
        Err(e) => return error_record(q, mode_label, format!("prompt: {e}")),
    };
    match client.complete(&prompt) {
        Ok(raw) => {
            let extracted = gateway::extract_answers(&raw, options.mode);
            let scored = metrics::precision_at_10(&extracted, &q.gold, &options.match_config);
            EvalRecord {
                question_id: q.question_id.clone(),
                pattern_index: q.pattern_index,
                mode: mode_label.to_string(),
                raw_output: raw,
                extracted,
                gold: q.gold.clone(),
                matches: scored.matches,
                precision: scored.precision,
                error: None,
            }
        }
        Err(e) => error_record(q, mode_label, format!("completion: {e}")),
    }
}

/// Run the model over every pending question and append scored records.
/// Questions fan out to `workers` threads; records are written in
/// completion order, which only matters cosmetically since every reader
/// keys by question id.
pub fn stage_evaluate(
    questions_path: &Path,
    records_path: &Path,
    client: &dyn CompletionClient,
    options: &EvaluateOptions,
) -> Result<EvalSummary, PipelineError> {
    options.match_config.validate()?;
    if options.workers == 0 {
        return Err(PipelineError::BadOptions("workers must be at least 1".into()));
    }
    let (_, questions): (RunMeta, Vec<QuestionRecord>) =
        artifact::read_artifact(questions_path, QUESTIONS_SCHEMA)?;

    let config = evaluate_config_echo(options, client);
    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("questions".to_string(), artifact::hash_file(questions_path)?);
    let meta = RunMeta::new(RECORDS_SCHEMA, options.seed, config, input_hashes);

    let mut kept: Vec<EvalRecord<Score>> = Vec::new();
    let mut writer;
    if options.resume && records_path.exists() {
        let (existing_meta, existing) = read_records(records_path)?;
        if existing_meta.config_hash != meta.config_hash {
            return Err(PipelineError::ResumeMismatch {
                path: records_path.display().to_string(),
                field: "config".to_string(),
            });
        }
        if existing_meta.input_hashes != meta.input_hashes {
            return Err(PipelineError::ResumeMismatch {
                path: records_path.display().to_string(),
                field: "input files".to_string(),
            });
        }
        kept = existing;
        if options.retry_failed {
            kept.retain(|r| r.error.is_none());
        }
        writer = artifact::JsonlWriter::append(records_path, RECORDS_SCHEMA)?.1;
    } else {
        writer = artifact::JsonlWriter::create(records_path, &meta)?;
    }
    let done: HashSet<&str> = kept.iter().map(|r| r.question_id.as_str()).collect();
    let pending: Vec<&QuestionRecord> = questions
        .iter()
        .filter(|q| !done.contains(q.question_id.as_str()))
        .collect();

    let mode_label = options.mode.label();
    let pool = build_demo_pool(&questions, options, &RationaleSet::builtin())?;
    if options.mode.shots() > 0 && pool.len() < options.mode.shots() {
        return Err(PipelineError::BadOptions(format!(
            "demonstration pool holds {} questions but the prompt needs {}",
            pool.len(),
            options.mode.shots()
        )));
    }

    let next = AtomicUsize::new(0);
    let (sender, receiver) = mpsc::channel::<EvalRecord<Score>>();
    let mut new_records: Vec<EvalRecord<Score>> = Vec::with_capacity(pending.len());
    let mut failed = 0usize;
    // Records land on disk as they arrive, so an interrupted run can
    // resume from everything already completed.
    std::thread::scope(|scope| -> Result<(), PipelineError> {
        for _ in 0..options.workers.min(pending.len().max(1)) {
            let sender = sender.clone();
            let pending = &pending;
            let pool = &pool;
            let next = &next;
            let mode_label = &mode_label;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = pending.get(i) else { break };
                let record = evaluate_one(q, pool, client, options, mode_label);
                if sender.send(record).is_err() {
                    break;
                }
            });
        }
        drop(sender);
        for record in receiver {
            if record.error.is_some() {
                failed += 1;
            }
            writer.push(&record)?;
            new_records.push(record);
        }
        Ok(())
    })?;
    writer.finish()?;

    let evaluated = new_records.len();
    let skipped = kept.len();
    let mut all = kept;
    all.extend(new_records);
    let mean = if all.is_empty() {
        0.0
    } else {
        all.iter().map(|r| r.precision).sum::<Score>() / all.len() as Score
    };
    Ok(EvalSummary {
        total_questions: questions.len(),
        evaluated,
        skipped,
        failed,
        mean_precision: mean,
    })
}

/// One set-operation comparison row aggregated over many questions.
#[derive(Debug, Clone, PartialEq)]
pub struct SetOpRow {
    pub family: Family,
    pub count: usize,
    pub mean_before: Score,
    pub mean_after: Score,
    pub mean_drop: Score,
}

/// Format percentages for the report's composite-versus-parts table.
pub fn render_set_op_row(label: &str, result: &SetOpResult<Score>) -> String {
    format!(
        "{:<14} {:>8.2} {:>8.2} {:>8.2}",
        label,
        result.weighted_before * 100.0,
        result.after * 100.0,
        result.drop * 100.0
    )
}

/// Pair whole-question records with their operand records and fold the
/// comparisons per family.
fn set_op_rows(
    whole: &[EvalRecord<Score>],
    subs: &[EvalRecord<Score>],
    catalog: &Catalog,
) -> Result<Vec<SetOpRow>, PipelineError> {
    let by_id: HashMap<&str, &EvalRecord<Score>> =
        subs.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut folds: BTreeMap<Family, (Score, Score, Score, usize)> = BTreeMap::new();
    for record in whole {
        let left = by_id.get(format!("{}.left", record.question_id).as_str());
        let right = by_id.get(format!("{}.right", record.question_id).as_str());
        let (Some(left), Some(right)) = (left, right) else { continue };
        if left.error.is_some() || right.error.is_some() || record.error.is_some() {
            continue;
        }
        let pattern = catalog
            .get(record.pattern_index)
            .ok_or(MetricsError::UnknownPattern(record.pattern_index))?;
        let result = match metrics::set_op_test(
            left.precision,
            right.precision,
            left.gold.len(),
            right.gold.len(),
            record.precision,
        ) {
            Ok(result) => result,
            Err(MetricsError::ZeroWeights) => continue,
            Err(other) => return Err(other.into()),
        };
        let entry = folds.entry(pattern.family).or_insert((0.0, 0.0, 0.0, 0));
        entry.0 += result.weighted_before;
        entry.1 += result.after;
        entry.2 += result.drop;
        entry.3 += 1;
    }
    Ok(folds
        .into_iter()
        .map(|(family, (before, after, drop, count))| SetOpRow {
            family,
            count,
            mean_before: before / count as Score,
            mean_after: after / count as Score,
            mean_drop: drop / count as Score,
        })
        .collect())
}

fn family_label(family: Family) -> &'static str {
    match family {
        Family::Projection => "Projection",
        Family::Intersection => "Intersection",
        Family::Union => "Union",
        Family::Negation => "Negation",
    }
}

struct ModeGroup {
    label: String,
    threshold: String,
    profile: String,
    client: String,
    records: Vec<EvalRecord<Score>>,
}

/// Cross-tabulated family-by-depth means for one mode.
fn family_depth_cells(
    records: &[EvalRecord<Score>],
    catalog: &Catalog,
) -> Result<BTreeMap<(Family, usize), Cell<Score>>, PipelineError> {
    let mut folds: BTreeMap<(Family, usize), (Score, usize)> = BTreeMap::new();
    for record in records {
        let pattern = catalog
            .get(record.pattern_index)
            .ok_or(MetricsError::UnknownPattern(record.pattern_index))?;
        let entry = folds.entry((pattern.family, pattern.depth)).or_insert((0.0, 0));
        entry.0 += record.precision;
        entry.1 += 1;
    }
    Ok(folds
        .into_iter()
        .map(|(key, (sum, count))| (key, Cell { mean: sum / count as Score, count }))
        .collect())
}

fn pct(value: Score) -> String {
    format!("{:.2}", value * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub text: String,
    pub modes: Vec<String>,
}

/// Render the evaluation report from one or more records files, writing
/// both the human-readable table text and a flat CSV.
pub fn stage_report(
    records_paths: &[PathBuf],
    subrecords_path: Option<&Path>,
    catalog: &Catalog,
    txt_out: &Path,
    csv_out: &Path,
) -> Result<ReportSummary, PipelineError> {
    if records_paths.is_empty() {
        return Err(PipelineError::BadOptions("no records files given".into()));
    }
    let mut groups: BTreeMap<String, ModeGroup> = BTreeMap::new();
    // One file per mode: merging two files under the same label (say an
    // oracle run and a corrupting run, both plain-2-shot) would silently
    // average unrelated clients.
    let mut origin: HashMap<String, &Path> = HashMap::new();
    for path in records_paths {
        let (meta, records) = read_records(path)?;
        for record in records {
            match origin.get(record.mode.as_str()) {
                None => {
                    origin.insert(record.mode.clone(), path);
                }
                Some(first) if *first != path.as_path() => {
                    return Err(PipelineError::BadOptions(format!(
                        "mode {} appears in both {} and {}; pass one records file per mode",
                        record.mode,
                        first.display(),
                        path.display()
                    )));
                }
                Some(_) => {}
            }
            let group = groups.entry(record.mode.clone()).or_insert_with(|| ModeGroup {
                label: record.mode.clone(),
                threshold: meta.config.get("threshold").cloned().unwrap_or_default(),
                profile: meta.config.get("profile").cloned().unwrap_or_default(),
                client: meta.config.get("client").cloned().unwrap_or_default(),
                records: Vec::new(),
            });
            group.records.push(record);
        }
    }
    let subs: Vec<EvalRecord<Score>> = match subrecords_path {
        Some(path) => read_records(path)?.1,
        None => Vec::new(),
    };

    let mut text = String::new();
    let mut csv_rows: Vec<[String; 5]> = Vec::new();
    text.push_str("Complex reasoning benchmark report\n");
    text.push_str(&format!("tool version {}\n\n", env!("CARGO_PKG_VERSION")));

    for group in groups.values() {
        let agg = metrics::aggregate(&group.records, catalog)?;
        let cross = family_depth_cells(&group.records, catalog)?;
        text.push_str(&format!(
            "== mode {} ==\nclient: {}\nrecords: {}\nmatch threshold: {} (profile: {})\n\n",
            group.label,
            group.client,
            group.records.len(),
            group.threshold,
            group.profile,
        ));

        text.push_str("Mean Precision@10 (%) by family and depth\n");
        text.push_str(&format!(
            "{:<14} {:>8} {:>8} {:>8} {:>8}\n",
            "family", "d1", "d2", "d3", "all"
        ));
        for family in [
            Family::Projection,
            Family::Intersection,
            Family::Union,
            Family::Negation,
        ] {
            let mut line = format!("{:<14}", family_label(family));
            for depth in 1..=3 {
                match cross.get(&(family, depth)) {
                    Some(cell) => line.push_str(&format!(" {:>8}", pct(cell.mean))),
                    None => line.push_str(&format!(" {:>8}", "-")),
                }
            }
            match agg.by_family.iter().find(|(f, _)| *f == family) {
                Some((_, cell)) => line.push_str(&format!(" {:>8}\n", pct(cell.mean))),
                None => line.push_str(&format!(" {:>8}\n", "-")),
            }
            text.push_str(&line);
        }
        let mut avg_line = format!("{:<14}", "Average");
        for depth in 1..=3 {
            match agg.by_depth.iter().find(|(d, _)| *d == depth) {
                Some((_, cell)) => avg_line.push_str(&format!(" {:>8}", pct(cell.mean))),
                None => avg_line.push_str(&format!(" {:>8}", "-")),
            }
        }
        avg_line.push_str(&format!(" {:>8}\n\n", pct(agg.overall.mean)));
        text.push_str(&avg_line);

        text.push_str("Mean Precision@10 (%) by operation variety\n");
        text.push_str(&format!("{:<14}", "variety"));
        for v in 1..=4 {
            text.push_str(&format!(" {:>8}", v));
        }
        text.push('\n');
        text.push_str(&format!("{:<14}", "mean"));
        for v in 1..=4usize {
            match agg.by_variety.iter().find(|(x, _)| *x == v) {
                Some((_, cell)) => text.push_str(&format!(" {:>8}", pct(cell.mean))),
                None => text.push_str(&format!(" {:>8}", "-")),
            }
        }
        text.push_str("\n\n");

        text.push_str("Mean Precision@10 (%) by pattern\n");
        for (index, cell) in &agg.by_pattern {
            let formula = catalog
                .get(*index)
                .map(|p| p.formula.render())
                .unwrap_or_else(|| "?".to_string());
            text.push_str(&format!(
                "  {:>2} {:<44} n={:<5} {:>7}\n",
                index,
                formula,
                cell.count,
                pct(cell.mean)
            ));
        }
        text.push('\n');

        csv_rows.push([
            "overall".into(),
            group.label.clone(),
            "all".into(),
            agg.overall.count.to_string(),
            pct(agg.overall.mean),
        ]);
        for (family, cell) in &agg.by_family {
            csv_rows.push([
                "family".into(),
                group.label.clone(),
                family_label(*family).to_string(),
                cell.count.to_string(),
                pct(cell.mean),
            ]);
        }
        for (depth, cell) in &agg.by_depth {
            csv_rows.push([
                "depth".into(),
                group.label.clone(),
                depth.to_string(),
                cell.count.to_string(),
                pct(cell.mean),
            ]);
        }
        for (variety, cell) in &agg.by_variety {
            csv_rows.push([
                "variety".into(),
                group.label.clone(),
                variety.to_string(),
                cell.count.to_string(),
                pct(cell.mean),
            ]);
        }
        for (index, cell) in &agg.by_pattern {
            csv_rows.push([
                "pattern".into(),
                group.label.clone(),
                index.to_string(),
                cell.count.to_string(),
                pct(cell.mean),
            ]);
        }
    }

    // Prompting-regime contrast: one plain and one chain-of-thought
    // group yield a per-variety delta table.
    let plain = groups.values().find(|g| g.label.starts_with("plain-"));
    let cot = groups.values().find(|g| g.label.starts_with("cot-"));
    if let (Some(plain), Some(cot)) = (plain, cot) {
        let plain_agg = metrics::aggregate(&plain.records, catalog)?;
        let cot_agg = metrics::aggregate(&cot.records, catalog)?;
        text.push_str(&format!(
            "Chain-of-thought gain by operation variety ({} minus {}, points)\n",
            cot.label, plain.label
        ));
        text.push_str(&format!("{:<14}", "variety"));
        for v in 1..=4 {
            text.push_str(&format!(" {:>8}", v));
        }
        text.push('\n');
        text.push_str(&format!("{:<14}", "delta"));
        for v in 1..=4usize {
            let p = plain_agg.by_variety.iter().find(|(x, _)| *x == v);
            let c = cot_agg.by_variety.iter().find(|(x, _)| *x == v);
            match (p, c) {
                (Some((_, p)), Some((_, c))) => {
                    let delta = (c.mean - p.mean) * 100.0;
                    text.push_str(&format!(" {:>8.2}", delta));
                    csv_rows.push([
                        "cot-delta".into(),
                        cot.label.clone(),
                        v.to_string(),
                        c.count.to_string(),
                        format!("{delta:.2}"),
                    ]);
                }
                _ => text.push_str(&format!(" {:>8}", "-")),
            }
        }
        text.push_str("\n\n");
    }

    if !subs.is_empty() {
        for group in groups.values() {
            let rows = set_op_rows(&group.records, &subs, catalog)?;
            if rows.is_empty() {
                continue;
            }
            text.push_str(&format!(
                "Composite versus parts, mode {} (%)\n{:<14} {:>8} {:>8} {:>8}  n\n",
                group.label, "family", "before", "after", "drop"
            ));
            for row in &rows {
                text.push_str(&format!(
                    "{:<14} {:>8.2} {:>8.2} {:>8.2}  {}\n",
                    family_label(row.family),
                    row.mean_before * 100.0,
                    row.mean_after * 100.0,
                    row.mean_drop * 100.0,
                    row.count
                ));
                csv_rows.push([
                    "set-op-drop".into(),
                    group.label.clone(),
                    family_label(row.family).to_string(),
                    row.count.to_string(),
                    format!("{:.2}", row.mean_drop * 100.0),
                ]);
            }
            text.push('\n');
        }
    }

    std::fs::write(txt_out, &text).map_err(|source| PipelineError::Io {
        path: txt_out.display().to_string(),
        source,
    })?;
    let csv_file = std::fs::File::create(csv_out).map_err(|source| PipelineError::Io {
        path: csv_out.display().to_string(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(csv_file);
    writer.write_record(["axis", "mode", "key", "count", "value"])?;
    for row in &csv_rows {
        writer.write_record(row)?;
    }
    writer
        .flush()
        .map_err(|source| PipelineError::Io { path: csv_out.display().to_string(), source })?;

    Ok(ReportSummary {
        text,
        modes: groups.keys().cloned().collect(),
    })
}
