//! Prompt construction, completion clients, and answer extraction.
//!
//! Prompts are rendered to stable bytes: a system instruction, k
//! demonstration blocks, then the target question. Plain demonstrations
//! are bare question/answer pairs; chain-of-thought demonstrations insert
//! a reasoning segment that ends with the fixed answer marker, and the
//! same marker is what extraction looks for in model output.
//!
//! Clients are pluggable behind [`CompletionClient`]: an HTTP client for
//! real chat-completion endpoints, plus deterministic mocks that replay
//! gold answers (optionally corrupted) for offline runs.

use std::collections::HashMap;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::Family;

/// The phrase a chain-of-thought response must use to introduce its
/// final answer list; extraction keys on its last occurrence.
pub const ANSWER_MARKER: &str = "my answer to this question is";

const BUILTIN_RATIONALES: &str = include_str!("../data/rationales.tsv");

/// One in-context example: a question, its answers, and the reasoning
/// text used in chain-of-thought mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Prompting regime; the payload is the demonstration count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    Plain { shots: usize },
    Cot { shots: usize },
}

impl PromptMode {
    pub fn shots(self) -> usize {
        match self {
            PromptMode::Plain { shots } | PromptMode::Cot { shots } => shots,
        }
    }

    pub fn is_cot(self) -> bool {
        matches!(self, PromptMode::Cot { .. })
    }

    /// Stable label recorded in evaluation artifacts.
    pub fn label(self) -> String {
        match self {
            PromptMode::Plain { shots } => format!("plain-{shots}-shot"),
            PromptMode::Cot { shots } => format!("cot-{shots}-shot"),
        }
    }
}

/// A fully assembled request, still structured so clients can choose
/// their own wire layout. [`Prompt::render`] is the canonical text form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system_instruction: String,
    pub demonstrations: Vec<Demonstration>,
    pub target_question: String,
    pub mode: PromptMode,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("mode expects {want} demonstrations, got {found}")]
    WrongDemonstrationCount { want: usize, found: usize },
    #[error("demonstration {index} has no rationale but the mode is chain-of-thought")]
    MissingRationale { index: usize },
    #[error("demonstration {index} carries a rationale but the mode is plain")]
    UnexpectedRationale { index: usize },
    #[error("demonstration {index} has an empty answer list")]
    EmptyAnswers { index: usize },
    #[error("gateway config: {0}")]
    BadConfig(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned status {status}: {message}")]
    Api { status: u16, message: String },
    #[error("rate limited and retries exhausted: {0}")]
    RateLimited(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint response had no completion text")]
    EmptyCompletion,
    #[error("mock client has no answers recorded for this question")]
    UnknownQuestion,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rationale file line {line}: {reason}")]
    BadRationaleRow { line: usize, reason: String },
    #[error("rationale file is missing family {0}")]
    MissingFamily(Family),
    #[error("demo file line {line}: {reason}")]
    BadDemoRow { line: usize, reason: String },
}

/// Default instruction for plain k-shot prompts.
pub fn default_system_instruction() -> String {
    "You answer questions about sets of named entities. Following the examples, \
     answer the final question with exactly 10 entity names as a single \
     comma-separated list, and nothing else."
        .to_string()
}

/// Default instruction for chain-of-thought prompts.
pub fn default_cot_instruction() -> String {
    format!(
        "You answer questions about sets of named entities. Following the examples, \
         reason step by step about the final question, then end your response with \
         the phrase \"{ANSWER_MARKER}:\" followed by exactly 10 entity names as a \
         single comma-separated list."
    )
}

/// Assemble a prompt, enforcing that the demonstrations fit the mode:
/// the count must equal the mode's shot count, and rationales must be
/// present exactly when the mode is chain-of-thought.
pub fn build_prompt(
    target_question: &str,
    demonstrations: &[Demonstration],
    mode: PromptMode,
) -> Result<Prompt, GatewayError> {
    if demonstrations.len() != mode.shots() {
        return Err(GatewayError::WrongDemonstrationCount {
            want: mode.shots(),
            found: demonstrations.len(),
        });
    }
    for (index, demo) in demonstrations.iter().enumerate() {
        if demo.answers.is_empty() {
            return Err(GatewayError::EmptyAnswers { index });
        }
        match (mode.is_cot(), demo.rationale.is_some()) {
            (true, false) => return Err(GatewayError::MissingRationale { index }),
            (false, true) => return Err(GatewayError::UnexpectedRationale { index }),
            _ => {}
        }
    }
    let system_instruction = if mode.is_cot() {
        default_cot_instruction()
    } else {
        default_system_instruction()
    };
    Ok(Prompt {
        system_instruction,
        demonstrations: demonstrations.to_vec(),
        target_question: target_question.to_string(),
        mode,
    })
}

impl Prompt {
    /// Canonical text rendering; identical prompts produce identical
    /// bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.system_instruction);
        out.push_str("\n\n");
        for demo in &self.demonstrations {
            out.push_str("Question: ");
            out.push_str(&demo.question);
            out.push('\n');
            if let (true, Some(rationale)) = (self.mode.is_cot(), demo.rationale.as_ref()) {
                out.push_str("Reasoning: ");
                out.push_str(rationale);
                out.push('\n');
                out.push_str(&format!("Therefore, {ANSWER_MARKER}: "));
            } else {
                out.push_str("Answer: ");
            }
            out.push_str(&demo.answers.join(", "));
            out.push_str("\n\n");
        }
        out.push_str("Question: ");
        out.push_str(&self.target_question);
        if !self.mode.is_cot() {
            out.push_str("\nAnswer:");
        }
        out
    }
}

/// Anything that can turn a prompt into raw model text.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError>;
    /// Stable identifier recorded in evaluation artifacts.
    fn describe(&self) -> String;
}

/// Pull the ranked answer list out of raw model output. In
/// chain-of-thought mode only the text after the last answer marker is
/// parsed, falling back to the whole text when no marker appears. Items
/// are split on commas, semicolons, and newlines; list numbering,
/// wrapping quotes, and trailing periods are stripped; duplicates are
/// dropped case-insensitively keeping the first; at most ten survive.
pub fn extract_answers(raw: &str, mode: PromptMode) -> Vec<String> {
    let relevant = if mode.is_cot() {
        match rfind_marker(raw) {
            Some(at) => &raw[at + ANSWER_MARKER.len()..],
            None => raw,
        }
    } else {
        raw
    };
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for piece in relevant.split(['\n', ',', ';']) {
        let cleaned = clean_answer(piece);
        if cleaned.is_empty() {
            continue;
        }
        if seen.insert(cleaned.to_lowercase()) {
            out.push(cleaned);
            if out.len() == 10 {
                break;
            }
        }
    }
    out
}

/// Byte offset of the last ASCII-case-insensitive occurrence of the
/// answer marker. The marker is pure ASCII, so the returned offset and
/// the slice after the match both sit on character boundaries.
fn rfind_marker(raw: &str) -> Option<usize> {
    let haystack = raw.as_bytes();
    let needle = ANSWER_MARKER.as_bytes();
    if haystack.len() < needle.len() {
        return None;
    }
    (0..=haystack.len() - needle.len())
        .rev()
        .find(|&i| haystack[i..i + needle.len()].eq_ignore_ascii_case(needle))
}

/// Strip one list item down to the entity name it carries.
fn clean_answer(piece: &str) -> String {
    let mut s = piece.trim();
    // Leading colon left over from the answer marker.
    s = s.trim_start_matches(':').trim_start();
    // Bullet markers.
    s = s.strip_prefix("- ").or_else(|| s.strip_prefix("* ")).unwrap_or(s);
    // List numbering: digits followed by '.' or ')'.
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(stripped) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = stripped.trim_start();
        }
    }
    // Wrapping quotes, then a trailing period.
    let mut s = s.trim().to_string();
    for quote in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(quote) && s.ends_with(quote) {
            s = s[1..s.len() - 1].trim().to_string();
        }
    }
    while s.ends_with('.') {
        s.pop();
        s = s.trim_end().to_string();
    }
    s
}

/// Per-family reasoning text attached to chain-of-thought
/// demonstrations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationaleSet {
    by_family: BTreeMap<Family, String>,
}

impl RationaleSet {
    /// The editable default shipped with the crate; covers all four
    /// families.
    pub fn builtin() -> RationaleSet {
        RationaleSet::parse(BUILTIN_RATIONALES).expect("shipped rationales are valid")
    }

    pub fn load(path: &Path) -> Result<RationaleSet, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RationaleSet::parse(&text)
    }

    /// Parse `family<TAB>rationale` rows; all four families must appear.
    pub fn parse(text: &str) -> Result<RationaleSet, GatewayError> {
        let mut by_family = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (family_name, rationale) =
                line.split_once('\t').ok_or_else(|| GatewayError::BadRationaleRow {
                    line: i + 1,
                    reason: "expected family<TAB>rationale".to_string(),
                })?;
            let family =
                Family::parse(family_name).ok_or_else(|| GatewayError::BadRationaleRow {
                    line: i + 1,
                    reason: format!("unknown family {family_name:?}"),
                })?;
            if rationale.trim().is_empty() {
                return Err(GatewayError::BadRationaleRow {
                    line: i + 1,
                    reason: "empty rationale".to_string(),
                });
            }
            by_family.insert(family, rationale.trim().to_string());
        }
        for family in [
            Family::Projection,
            Family::Intersection,
            Family::Union,
            Family::Negation,
        ] {
            if !by_family.contains_key(&family) {
                return Err(GatewayError::MissingFamily(family));
            }
        }
        Ok(RationaleSet { by_family })
    }

    pub fn get(&self, family: Family) -> &str {
        &self.by_family[&family]
    }
}

/// Read a JSON-lines demonstration file.
pub fn load_demonstrations(path: &Path) -> Result<Vec<Demonstration>, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration =
            serde_json::from_str(line).map_err(|e| GatewayError::BadDemoRow {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if demo.answers.is_empty() {
            return Err(GatewayError::BadDemoRow {
                line: i + 1,
                reason: "empty answer list".to_string(),
            });
        }
        out.push(demo);
    }
    Ok(out)
}

/// Admission control shared by all in-flight requests: a token bucket
/// refilled at the configured request rate, with burst capacity 1.
pub struct RateLimiter {
    rate_per_sec: f64,
    state: Mutex<BucketState>,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32) -> RateLimiter {
        RateLimiter {
            rate_per_sec: f64::from(requests_per_minute.max(1)) / 60.0,
            state: Mutex::new(BucketState { tokens: 1.0, last_refill: Instant::now() }),
        }
    }

    /// Take one token, or say how long until one will be available.
    fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("limiter lock");
        let elapsed = now.saturating_duration_since(state.last_refill).as_secs_f64();
        state.tokens = (state.tokens + elapsed * self.rate_per_sec).min(1.0);
        state.last_refill = now;
        if state.tokens >= 1.0 {
            state.tokens -= 1.0;
            Ok(())
        } else {
            let deficit = 1.0 - state.tokens;
            Err(Duration::from_secs_f64(deficit / self.rate_per_sec))
        }
    }

    /// Block until a token is granted.
    pub fn acquire(&self) {
        loop {
            match self.try_acquire_at(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait.min(Duration::from_millis(200))),
            }
        }
    }
}

/// Settings for the HTTP chat-completion client.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpClientConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; when the variable
    /// is unset the request is sent without authorization, which suits
    /// local endpoints.
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// First backoff delay; doubles per retry.
    pub retry_base: Duration,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: "FOLBENCH_API_KEY".to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            requests_per_minute: 60,
            temperature: 0.0,
            max_tokens: 1024,
            retry_base: Duration::from_millis(500),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

/// Blocking chat-completion client with retries, exponential backoff,
/// and shared rate limiting.
pub struct HttpClient {
    config: HttpClientConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<HttpClient, GatewayError> {
        if config.endpoint.is_empty() {
            return Err(GatewayError::BadConfig("endpoint URL is empty".into()));
        }
        if config.model.is_empty() {
            return Err(GatewayError::BadConfig("model name is empty".into()));
        }
        let api_key = std::env::var(&config.api_key_env).ok();
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let limiter = RateLimiter::new(config.requests_per_minute);
        Ok(HttpClient { config, api_key, http, limiter })
    }

    fn request_once(&self, body: &WireRequest<'_>) -> Result<String, GatewayError> {
        self.limiter.acquire();
        let mut request = self.http.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout(self.config.timeout)
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Api { status: status.as_u16(), message: truncate(&text, 200) });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or(GatewayError::EmptyCompletion)
    }

    fn retryable(error: &GatewayError) -> bool {
        match error {
            GatewayError::Timeout(_) | GatewayError::Transport(_) => true,
            GatewayError::Api { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let rendered = prompt.render();
        let user_part = rendered
            .strip_prefix(&prompt.system_instruction)
            .map(|rest| rest.trim_start_matches('\n'))
            .unwrap_or(&rendered);
        let body = WireRequest {
            model: &self.config.model,
            messages: vec![
                WireMessage { role: "system", content: &prompt.system_instruction },
                WireMessage { role: "user", content: user_part },
            ],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut delay = self.config.retry_base;
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            match self.request_once(&body) {
                Ok(text) => return Ok(text),
                Err(e) if Self::retryable(&e) && attempt < self.config.max_retries => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        // Loop always returns inside; reaching here means max_retries
        // wrapped around zero attempts.
        Err(last.unwrap_or_else(|| GatewayError::Transport("no attempts made".into())))
    }

    fn describe(&self) -> String {
        format!("http:{}", self.config.model)
    }
}

/// Replays the first ten gold answers for every question it was built
/// from. Keyed by exact question text.
pub struct OracleClient {
    answers: HashMap<String, Vec<String>>,
}

impl OracleClient {
    pub fn new(answers: HashMap<String, Vec<String>>) -> OracleClient {
        OracleClient { answers }
    }

    /// Key one question's gold answers by its text.
    pub fn insert(&mut self, question: &str, gold: &[String]) {
        self.answers.insert(
            question.to_string(),
            gold.iter().take(10).cloned().collect(),
        );
    }

    pub fn from_pairs<'a, I>(pairs: I) -> OracleClient
    where
        I: IntoIterator<Item = (&'a str, &'a [String])>,
    {
        let mut client = OracleClient { answers: HashMap::new() };
        for (question, gold) in pairs {
            client.insert(question, gold);
        }
        client
    }
}

impl CompletionClient for OracleClient {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let gold = self
            .answers
            .get(&prompt.target_question)
            .ok_or(GatewayError::UnknownQuestion)?;
        let list = gold.join(", ");
        if prompt.mode.is_cot() {
            Ok(format!(
                "I will work through the described sets step by step. \
                 Therefore, {ANSWER_MARKER}: {list}"
            ))
        } else {
            Ok(list)
        }
    }

    fn describe(&self) -> String {
        "mock-oracle".to_string()
    }
}

/// Like [`OracleClient`], but deterministically replaces
/// `corruption_count` of each question's answers with strings verified
/// not to fuzzy-match any gold name.
pub struct CorruptingClient {
    oracle: OracleClient,
    corruption_count: usize,
    seed: u64,
}

impl CorruptingClient {
    pub fn new(oracle: OracleClient, corruption_count: usize, seed: u64) -> CorruptingClient {
        CorruptingClient { oracle, corruption_count, seed }
    }

    /// A distractor is grown until it is far from every gold name under
    /// the loosest matching profile, so corrupted slots can never score.
    fn distractor(&self, slot: usize, question: &str, gold: &[String]) -> String {
        let config = crate::metrics::MatchConfig::<f64>::general();
        let mut candidate = format!("vzqx{slot} wrong answer {:x}", fnv1a(question) & 0xffff);
        loop {
            let worst = gold
                .iter()
                .map(|g| {
                    crate::metrics::jaro_winkler::<f64>(
                        &crate::metrics::normalize(&candidate),
                        &crate::metrics::normalize(g),
                        &config,
                    )
                })
                .fold(0.0, f64::max);
            if worst < 0.85 {
                return candidate;
            }
            candidate.push_str("zq");
        }
    }
}

/// FNV-1a over UTF-8 bytes; used to derive stable per-question streams.
pub fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl CompletionClient for CorruptingClient {
    fn complete(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let gold = self
            .oracle
            .answers
            .get(&prompt.target_question)
            .ok_or(GatewayError::UnknownQuestion)?;
        let mut answers = gold.clone();
        // Corrupt a deterministic per-question choice of slots.
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(
            self.seed ^ fnv1a(&prompt.target_question),
        );
        let mut slots: Vec<usize> = (0..answers.len()).collect();
        slots.shuffle(&mut rng);
        for &slot in slots.iter().take(self.corruption_count) {
            answers[slot] = self.distractor(slot, &prompt.target_question, gold);
        }
        Ok(answers.join(", "))
    }

    fn describe(&self) -> String {
        format!("mock-corrupting-{}", self.corruption_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(question: &str, answers: &[&str], rationale: Option<&str>) -> Demonstration {
        Demonstration {
            question: question.to_string(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            rationale: rationale.map(|s| s.to_string()),
        }
    }

    #[test]
    fn plain_prompt_has_qa_blocks_and_no_marker() {
        let demos = [
            demo("Who knows alice?", &["bob", "carol"], None),
            demo("Who likes bob?", &["eve"], None),
        ];
        let prompt =
            build_prompt("Who knows dave?", &demos, PromptMode::Plain { shots: 2 }).unwrap();
        let text = prompt.render();
        assert_eq!(text.matches("Question: ").count(), 3);
        assert_eq!(text.matches("Answer:").count(), 3);
        assert!(!text.contains(ANSWER_MARKER));
        assert!(text.ends_with("Question: Who knows dave?\nAnswer:"));
    }

    #[test]
    fn cot_prompt_has_rationales_and_markers() {
        let demos: Vec<_> = (0..4)
            .map(|i| demo(&format!("q{i}"), &["a"], Some("step by step")))
            .collect();
        let prompt = build_prompt("target?", &demos, PromptMode::Cot { shots: 4 }).unwrap();
        let text = prompt.render();
        assert_eq!(text.matches("Reasoning: ").count(), 4);
        // Four demonstration markers plus one in the system instruction.
        assert_eq!(text.matches(ANSWER_MARKER).count(), 5);
        assert!(!text.ends_with("Answer:"));
    }

    #[test]
    fn prompt_mode_mismatches_are_rejected() {
        let plain = [demo("q", &["a"], None), demo("q2", &["a"], None)];
        assert!(matches!(
            build_prompt("t", &plain, PromptMode::Plain { shots: 3 }),
            Err(GatewayError::WrongDemonstrationCount { want: 3, found: 2 })
        ));
        assert!(matches!(
            build_prompt("t", &plain, PromptMode::Cot { shots: 2 }),
            Err(GatewayError::MissingRationale { index: 0 })
        ));
        let with_rationale = [demo("q", &["a"], Some("because"))];
        assert!(matches!(
            build_prompt("t", &with_rationale, PromptMode::Plain { shots: 1 }),
            Err(GatewayError::UnexpectedRationale { index: 0 })
        ));
        let empty = [demo("q", &[], None)];
        assert!(matches!(
            build_prompt("t", &empty, PromptMode::Plain { shots: 1 }),
            Err(GatewayError::EmptyAnswers { index: 0 })
        ));
    }

    #[test]
    fn prompt_rendering_is_deterministic() {
        let demos = [demo("q", &["a", "b"], None)];
        let p1 = build_prompt("t", &demos, PromptMode::Plain { shots: 1 }).unwrap();
        let p2 = build_prompt("t", &demos, PromptMode::Plain { shots: 1 }).unwrap();
        assert_eq!(p1.render().into_bytes(), p2.render().into_bytes());
    }

    #[test]
    fn extraction_splits_and_cleans() {
        let mode = PromptMode::Plain { shots: 2 };
        assert_eq!(
            extract_answers("Sylvester Stallone, Jason Statham, Jet Li", mode),
            vec!["Sylvester Stallone", "Jason Statham", "Jet Li"]
        );
        assert_eq!(
            extract_answers("1. Alpha\n2. Beta\n2. Beta", mode),
            vec!["Alpha", "Beta"]
        );
        assert_eq!(
            extract_answers("\"Quoted\"; 'Single'; Plain.", mode),
            vec!["Quoted", "Single", "Plain"]
        );
        assert_eq!(
            extract_answers("- dash item\n* star item\n3) paren item", mode),
            vec!["dash item", "star item", "paren item"]
        );
        assert_eq!(extract_answers("", mode), Vec::<String>::new());
        assert_eq!(extract_answers("  ,, ;\n", mode), Vec::<String>::new());
    }

    #[test]
    fn extraction_dedupes_case_insensitively_and_caps_at_ten() {
        let mode = PromptMode::Plain { shots: 2 };
        assert_eq!(extract_answers("Paris, paris, PARIS", mode), vec!["Paris"]);
        let many: Vec<String> = (0..15).map(|i| format!("item {i}")).collect();
        let extracted = extract_answers(&many.join(", "), mode);
        assert_eq!(extracted.len(), 10);
        assert_eq!(extracted[9], "item 9");
    }

    #[test]
    fn cot_extraction_reads_after_the_last_marker() {
        let mode = PromptMode::Cot { shots: 4 };
        let raw = format!(
            "Let me think. The first set is big. Actually, {ANSWER_MARKER}: wrong, guesses.\n\
             Wait, reconsidering everything, {ANSWER_MARKER}: Alpha, Beta"
        );
        assert_eq!(extract_answers(&raw, mode), vec!["Alpha", "Beta"]);
        // Marker absent: the whole text is parsed.
        assert_eq!(
            extract_answers("Gamma, Delta", mode),
            vec!["Gamma", "Delta"]
        );
        // Case-insensitive marker match.
        let raw = "reasoning... My Answer To This Question Is: Epsilon";
        assert_eq!(extract_answers(raw, mode), vec!["Epsilon"]);
    }

    #[test]
    fn oracle_closure_round_trip() {
        let gold: Vec<String> = (0..12).map(|i| format!("gold entity {i}")).collect();
        let client = OracleClient::from_pairs([("the question?", gold.as_slice())]);
        let demos = [demo("d1", &["x"], None), demo("d2", &["y"], None)];
        let prompt =
            build_prompt("the question?", &demos, PromptMode::Plain { shots: 2 }).unwrap();
        let raw = client.complete(&prompt).unwrap();
        let extracted = extract_answers(&raw, prompt.mode);
        assert_eq!(extracted, gold[..10].to_vec());
    }

    #[test]
    fn oracle_cot_output_carries_the_marker() {
        let gold: Vec<String> = vec!["a".into(), "b".into()];
        let client = OracleClient::from_pairs([("q?", gold.as_slice())]);
        let demos: Vec<_> = (0..4)
            .map(|i| demo(&format!("d{i}"), &["x"], Some("steps")))
            .collect();
        let prompt = build_prompt("q?", &demos, PromptMode::Cot { shots: 4 }).unwrap();
        let raw = client.complete(&prompt).unwrap();
        assert!(raw.contains(ANSWER_MARKER));
        assert_eq!(extract_answers(&raw, prompt.mode), vec!["a", "b"]);
    }

    #[test]
    fn oracle_rejects_unknown_questions() {
        let client = OracleClient::new(HashMap::new());
        let prompt = build_prompt("??", &[], PromptMode::Plain { shots: 0 }).unwrap();
        assert!(matches!(
            client.complete(&prompt).unwrap_err(),
            GatewayError::UnknownQuestion
        ));
    }

    #[test]
    fn corrupting_client_damages_exactly_k_slots() {
        use crate::metrics::{precision_at_10, MatchConfig};
        let gold: Vec<String> = (0..10).map(|i| format!("genuine entity {i}")).collect();
        for k in [0usize, 3, 7, 10] {
            let oracle = OracleClient::from_pairs([("q?", gold.as_slice())]);
            let client = CorruptingClient::new(oracle, k, 99);
            let prompt = build_prompt("q?", &[], PromptMode::Plain { shots: 0 }).unwrap();
            let raw = client.complete(&prompt).unwrap();
            let extracted = extract_answers(&raw, prompt.mode);
            assert_eq!(extracted.len(), 10, "k={k}");
            let scored = precision_at_10(&extracted, &gold, &MatchConfig::<f64>::general());
            assert_eq!(scored.matched_count, 10 - k, "k={k}");
        }
    }

    #[test]
    fn corrupting_client_is_deterministic() {
        let gold: Vec<String> = (0..10).map(|i| format!("entity {i}")).collect();
        let prompt = build_prompt("q?", &[], PromptMode::Plain { shots: 0 }).unwrap();
        let run = |seed: u64| {
            let oracle = OracleClient::from_pairs([("q?", gold.as_slice())]);
            CorruptingClient::new(oracle, 4, seed).complete(&prompt).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn builtin_rationales_cover_all_families() {
        let set = RationaleSet::builtin();
        for family in [
            Family::Projection,
            Family::Intersection,
            Family::Union,
            Family::Negation,
        ] {
            assert!(!set.get(family).is_empty());
        }
    }

    #[test]
    fn rationale_file_validation() {
        assert!(matches!(
            RationaleSet::parse("Projection\tokay\n").unwrap_err(),
            GatewayError::MissingFamily(Family::Intersection)
        ));
        assert!(matches!(
            RationaleSet::parse("Nonsense\ttext\n").unwrap_err(),
            GatewayError::BadRationaleRow { line: 1, .. }
        ));
        assert!(matches!(
            RationaleSet::parse("Projection no tab\n").unwrap_err(),
            GatewayError::BadRationaleRow { line: 1, .. }
        ));
    }

    #[test]
    fn demonstration_files_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        use std::io::Write;
        let demos = [
            demo("q1", &["a", "b"], None),
            demo("q2", &["c"], Some("thinking")),
        ];
        for d in &demos {
            writeln!(file, "{}", serde_json::to_string(d).unwrap()).unwrap();
        }
        let loaded = load_demonstrations(file.path()).unwrap();
        assert_eq!(loaded, demos);
        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "{{\"question\":\"q\",\"answers\":[]}}").unwrap();
        assert!(matches!(
            load_demonstrations(bad.path()).unwrap_err(),
            GatewayError::BadDemoRow { line: 1, .. }
        ));
    }

    #[test]
    fn rate_limiter_token_arithmetic() {
        let limiter = RateLimiter::new(60);
        let start = Instant::now();
        // The bucket starts full: first acquire free, second must wait
        // about one second at 60 requests/minute.
        assert!(limiter.try_acquire_at(start).is_ok());
        let wait = limiter.try_acquire_at(start).unwrap_err();
        assert!(wait > Duration::from_millis(900) && wait <= Duration::from_secs(1));
        // After the refill interval a token is available again.
        assert!(limiter.try_acquire_at(start + Duration::from_secs(1)).is_ok());
    }

    #[test]
    fn http_client_requires_endpoint_and_model() {
        let missing = HttpClientConfig::default();
        assert!(matches!(
            HttpClient::new(missing),
            Err(GatewayError::BadConfig(_))
        ));
        let no_model = HttpClientConfig {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            ..HttpClientConfig::default()
        };
        assert!(matches!(
            HttpClient::new(no_model),
            Err(GatewayError::BadConfig(_))
        ));
    }

    /// Minimal one-shot HTTP server; answers each connection with the
    /// canned responses in order, then stops.
    fn serve_responses(responses: Vec<String>) -> Option<(std::net::SocketAddr, std::thread::JoinHandle<()>)> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").ok()?;
        let addr = listener.local_addr().ok()?;
        let handle = std::thread::spawn(move || {
            for response in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                use std::io::{Read, Write};
                let mut buf = [0u8; 65536];
                // Read until the end of headers plus any body bytes ready.
                let _ = stream.read(&mut buf);
                let _ = stream.write_all(response.as_bytes());
            }
        });
        Some((addr, handle))
    }

    fn ok_response(content: &str) -> String {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string();
        format!(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            body.len(),
            body
        )
    }

    fn error_response(status: u16) -> String {
        let body = "{\"error\":\"boom\"}";
        format!(
            "HTTP/1.1 {status} Error\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            body.len(),
            body
        )
    }

    fn local_config(addr: std::net::SocketAddr) -> HttpClientConfig {
        HttpClientConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            model: "test-model".into(),
            api_key_env: "FOLBENCH_TEST_KEY_UNSET".into(),
            timeout: Duration::from_secs(5),
            max_retries: 2,
            requests_per_minute: 60_000,
            retry_base: Duration::from_millis(1),
            ..HttpClientConfig::default()
        }
    }

    #[test]
    fn http_client_happy_path() {
        let Some((addr, handle)) = serve_responses(vec![ok_response("Alpha, Beta")]) else {
            return; // loopback sockets unavailable in this environment
        };
        let client = HttpClient::new(local_config(addr)).unwrap();
        let prompt = build_prompt("q?", &[], PromptMode::Plain { shots: 0 }).unwrap();
        assert_eq!(client.complete(&prompt).unwrap(), "Alpha, Beta");
        handle.join().unwrap();
    }

    #[test]
    fn http_client_retries_server_errors_then_succeeds() {
        let Some((addr, handle)) =
            serve_responses(vec![error_response(500), ok_response("Recovered")])
        else {
            return;
        };
        let client = HttpClient::new(local_config(addr)).unwrap();
        let prompt = build_prompt("q?", &[], PromptMode::Plain { shots: 0 }).unwrap();
        assert_eq!(client.complete(&prompt).unwrap(), "Recovered");
        handle.join().unwrap();
    }

    #[test]
    fn http_client_surfaces_client_errors_without_retry() {
        let Some((addr, handle)) = serve_responses(vec![error_response(400)]) else {
            return;
        };
        let client = HttpClient::new(local_config(addr)).unwrap();
        let prompt = build_prompt("q?", &[], PromptMode::Plain { shots: 0 }).unwrap();
        match client.complete(&prompt).unwrap_err() {
            GatewayError::Api { status, .. } => assert_eq!(status, 400),
            other => panic!("unexpected error {other:?}"),
        }
        handle.join().unwrap();
    }
}
