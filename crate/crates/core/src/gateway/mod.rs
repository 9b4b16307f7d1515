//! Single chokepoint for model traffic.
//!
//! Four roles flow through here — the *generator* (paraphrases, counter
//! answers, evidence), the *evaluee* (the model under measurement), the
//! *judge* (Same/Contradicted verdicts), and the *entailer* (NLI labels).
//! The gateway owns role routing, decode defaults (greedy for every
//! verdict-producing role, temperature 1.0 for the generator), bounded
//! per-endpoint concurrency, retry with exponential backoff on transient
//! failures, verdict parsing with a single re-ask, and the append-only call
//! cache in [`cache`].
//!
//! Everything above this layer is deterministic given backend behavior, so a
//! run can be replayed from a warm cache without touching the network.

pub mod cache;
pub mod http;
pub mod mock;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{
    Template, TemplateError, ANSWER_CONSISTENCY, QUESTION_EQUIVALENCE, TEMPLATE_VERSION,
};
use cache::CallCache;

// --- roles and requests ---

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Generator,
    Evaluee,
    Judge,
    Entailer,
}

impl ModelRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Generator => "generator",
            ModelRole::Evaluee => "evaluee",
            ModelRole::Judge => "judge",
            ModelRole::Entailer => "entailer",
        }
    }

    /// Generation explores; every verdict-producing role is greedy.
    pub fn default_temperature(self) -> f32 {
        match self {
            ModelRole::Generator => 1.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f32,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl DecodeParams {
    pub fn for_role(role: ModelRole) -> Self {
        DecodeParams {
            temperature: role.default_temperature(),
            max_tokens: 256,
            seed: None,
        }
    }
}

/// One rendered call. `attempt` is the regeneration / re-ask ordinal; it is
/// folded into the cache key so a retry is never served the very response it
/// is retrying, and scripted mocks can vary behavior per attempt.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub role: ModelRole,
    pub template: String,
    pub prompt: String,
    pub decode: DecodeParams,
    pub attempt: u32,
}

// --- backends ---

/// Transport-level failure. `transient` failures (connect errors, 429, 5xx)
/// are retried with backoff; everything else fails fast.
#[derive(Debug)]
pub struct BackendError {
    pub transient: bool,
    pub detail: String,
}

impl BackendError {
    pub fn transient(detail: impl Into<String>) -> Self {
        BackendError {
            transient: true,
            detail: detail.into(),
        }
    }
    pub fn fatal(detail: impl Into<String>) -> Self {
        BackendError {
            transient: false,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.detail)
    }
}

impl std::error::Error for BackendError {}

pub trait ChatBackend: Send + Sync {
    /// Stable identity folded into cache keys (base URL + model, or a mock tag).
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

/// Entailment classification: premise -> hypothesis. Returns the raw label
/// text; the gateway parses it so every adapter (NLI endpoint, judge-prompted
/// fallback, offline heuristic) is interchangeable.
pub trait EntailmentBackend: Send + Sync {
    fn id(&self) -> &str;
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<String, BackendError>;
}

// --- verdicts ---

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeLabel {
    Same,
    Contradicted,
}

#[derive(Debug, Clone)]
pub struct JudgeVerdict {
    pub label: JudgeLabel,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl fmt::Display for EntailmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntailmentLabel::Entailment => "entailment",
            EntailmentLabel::Neutral => "neutral",
            EntailmentLabel::Contradiction => "contradiction",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EntailmentVerdict {
    pub label: EntailmentLabel,
    pub raw: String,
}

/// Case-insensitive keyword scan; when both keywords appear, the earlier
/// occurrence wins. Returns `None` when neither is present.
pub fn scan_judge_label(raw: &str) -> Option<JudgeLabel> {
    first_keyword(
        raw,
        &[
            ("same", JudgeLabel::Same),
            ("contradicted", JudgeLabel::Contradicted),
        ],
    )
}

pub fn scan_entailment_label(raw: &str) -> Option<EntailmentLabel> {
    first_keyword(
        raw,
        &[
            ("entailment", EntailmentLabel::Entailment),
            ("neutral", EntailmentLabel::Neutral),
            ("contradiction", EntailmentLabel::Contradiction),
        ],
    )
}

fn first_keyword<T: Copy>(raw: &str, keys: &[(&str, T)]) -> Option<T> {
    let hay = raw.to_lowercase();
    keys.iter()
        .filter_map(|(k, v)| hay.find(k).map(|at| (at, *v)))
        .min_by_key(|(at, _)| *at)
        .map(|(_, v)| v)
}

// --- errors ---

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no backend configured for role {0}")]
    MissingRole(ModelRole),
    #[error("{role} endpoint unavailable after {attempts} attempt(s): {detail}")]
    EndpointUnavailable {
        role: ModelRole,
        attempts: u32,
        detail: String,
    },
    #[error("unparseable {kind} verdict after re-ask; last raw response: {raw:?}")]
    UnparseableVerdict { kind: &'static str, raw: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("call cache: {0}")]
    Cache(#[from] std::io::Error),
}

// --- concurrency bound ---

/// Minimal counting semaphore; bounds in-flight calls per endpoint.
struct Limiter {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}

// --- retry policy ---

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

// --- gateway ---

struct ChatEndpoint {
    backend: Arc<dyn ChatBackend>,
    decode: DecodeParams,
    limiter: Limiter,
}

struct EntailEndpoint {
    backend: Arc<dyn EntailmentBackend>,
    limiter: Limiter,
}

pub struct Gateway {
    chat: HashMap<ModelRole, ChatEndpoint>,
    entail: Option<EntailEndpoint>,
    cache: CallCache,
    retry: RetryPolicy,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

pub struct GatewayBuilder {
    chat: HashMap<ModelRole, ChatEndpoint>,
    entail: Option<EntailEndpoint>,
    cache: Option<CallCache>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            chat: HashMap::new(),
            entail: None,
            cache: None,
            retry: RetryPolicy::default(),
        }
    }

    /// Renders the template and completes it under the given role's decode
    /// parameters. Served from cache when the identical call was made before.
    pub fn call(
        &self,
        role: ModelRole,
        template: &Template,
        fills: &[(&str, &str)],
        attempt: u32,
    ) -> Result<String, GatewayError> {
        let prompt = template.render(fills)?;
        self.call_rendered(role, template.name, prompt, attempt)
    }

    /// Completion for an already-rendered prompt (used for composed prompts
    /// like the single-letter re-prompt during choice parsing).
    pub fn call_rendered(
        &self,
        role: ModelRole,
        template_name: &str,
        prompt: String,
        attempt: u32,
    ) -> Result<String, GatewayError> {
        let ep = self
            .chat
            .get(&role)
            .ok_or(GatewayError::MissingRole(role))?;
        let key = cache::call_key(
            role.as_str(),
            ep.backend.id(),
            template_name,
            TEMPLATE_VERSION,
            &ep.decode,
            attempt,
            &prompt,
        );
        if let Some(hit) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        let request = CompletionRequest {
            role,
            template: template_name.to_string(),
            prompt,
            decode: ep.decode,
            attempt,
        };
        let text = self.with_retries(role, || {
            let _permit = ep.limiter.acquire();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            ep.backend.complete(&request)
        })?;
        self.cache.put(&key, &text, TEMPLATE_VERSION)?;
        Ok(text)
    }

    /// Same/Contradicted: does the rewritten question still ask the same thing?
    pub fn judge_equivalence(
        &self,
        original: &str,
        candidate: &str,
    ) -> Result<JudgeVerdict, GatewayError> {
        self.judged(
            &QUESTION_EQUIVALENCE,
            &[
                ("[Paraphrased Q1]", original),
                ("[Paraphrased Q2]", candidate),
            ],
            "equivalence",
        )
    }

    /// Same/Contradicted: do two answers to the question say the same thing?
    pub fn judge_answer_consistency(
        &self,
        question: &str,
        answer_one: &str,
        answer_two: &str,
    ) -> Result<JudgeVerdict, GatewayError> {
        self.judged(
            &ANSWER_CONSISTENCY,
            &[
                ("[question]", question),
                ("[LLM answer 1]", answer_one),
                ("[LLM answer 2]", answer_two),
            ],
            "consistency",
        )
    }

    fn judged(
        &self,
        template: &Template,
        fills: &[(&str, &str)],
        kind: &'static str,
    ) -> Result<JudgeVerdict, GatewayError> {
        let mut last_raw = String::new();
        for attempt in 0..=1 {
            let raw = self.call(ModelRole::Judge, template, fills, attempt)?;
            if let Some(label) = scan_judge_label(&raw) {
                return Ok(JudgeVerdict { label, raw });
            }
            last_raw = raw;
        }
        Err(GatewayError::UnparseableVerdict {
            kind,
            raw: last_raw,
        })
    }

    /// Entailment label for premise -> hypothesis, with one re-ask on an
    /// unparseable response. Cached like every other call.
    pub fn entail(
        &self,
        premise: &str,
        hypothesis: &str,
    ) -> Result<EntailmentVerdict, GatewayError> {
        let ep = self
            .entail
            .as_ref()
            .ok_or(GatewayError::MissingRole(ModelRole::Entailer))?;
        let decode = DecodeParams {
            temperature: 0.0,
            max_tokens: 0,
            seed: None,
        };
        let prompt = format!("premise: {premise}\nhypothesis: {hypothesis}");
        let mut last_raw = String::new();
        for attempt in 0..=1 {
            let key = cache::call_key(
                ModelRole::Entailer.as_str(),
                ep.backend.id(),
                "entailment",
                TEMPLATE_VERSION,
                &decode,
                attempt,
                &prompt,
            );
            let raw = match self.cache.get(&key) {
                Some(hit) => {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    hit
                }
                None => {
                    let raw = self.with_retries(ModelRole::Entailer, || {
                        let _permit = ep.limiter.acquire();
                        self.backend_calls.fetch_add(1, Ordering::Relaxed);
                        ep.backend.entail(premise, hypothesis)
                    })?;
                    self.cache.put(&key, &raw, TEMPLATE_VERSION)?;
                    raw
                }
            };
            if let Some(label) = scan_entailment_label(&raw) {
                return Ok(EntailmentVerdict { label, raw });
            }
            last_raw = raw;
        }
        Err(GatewayError::UnparseableVerdict {
            kind: "entailment",
            raw: last_raw,
        })
    }

    fn with_retries(
        &self,
        role: ModelRole,
        attempt_fn: impl Fn() -> Result<String, BackendError>,
    ) -> Result<String, GatewayError> {
        let mut delay = self.retry.base_delay;
        let mut last_detail = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match attempt_fn() {
                Ok(text) => return Ok(text),
                Err(e) if e.transient && attempt < self.retry.max_attempts => {
                    last_detail = e.detail;
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
                Err(e) => {
                    return Err(GatewayError::EndpointUnavailable {
                        role,
                        attempts: attempt,
                        detail: e.detail,
                    })
                }
            }
        }
        Err(GatewayError::EndpointUnavailable {
            role,
            attempts: self.retry.max_attempts,
            detail: last_detail,
        })
    }

    /// Number of actual backend invocations (every retry counts; cache hits
    /// do not).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }
}

impl GatewayBuilder {
    /// Registers a chat backend for a role with the role's decode defaults
    /// and a per-endpoint parallelism bound of 4.
    pub fn chat(self, role: ModelRole, backend: Arc<dyn ChatBackend>) -> Self {
        let decode = DecodeParams::for_role(role);
        self.chat_with(role, backend, decode, 4)
    }

    pub fn chat_with(
        mut self,
        role: ModelRole,
        backend: Arc<dyn ChatBackend>,
        decode: DecodeParams,
        parallelism: usize,
    ) -> Self {
        self.chat.insert(
            role,
            ChatEndpoint {
                backend,
                decode,
                limiter: Limiter::new(parallelism),
            },
        );
        self
    }

    pub fn entailer(mut self, backend: Arc<dyn EntailmentBackend>, parallelism: usize) -> Self {
        self.entail = Some(EntailEndpoint {
            backend,
            limiter: Limiter::new(parallelism),
        });
        self
    }

    pub fn cache_path(mut self, path: &Path) -> Result<Self, GatewayError> {
        self.cache = Some(CallCache::at_path(path)?);
        Ok(self)
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            chat: self.chat,
            entail: self.entail,
            cache: self.cache.unwrap_or_else(CallCache::in_memory),
            retry: self.retry,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }
}

/// Entailment via a plain judge prompt, for deployments without an NLI
/// endpoint. Lower fidelity than a dedicated classifier; runs that use it are
/// flagged as such in their manifest.
pub struct JudgePromptEntailer {
    id: String,
    chat: Arc<dyn ChatBackend>,
    decode: DecodeParams,
}

/// Internal adapter prompt; not part of the canonical template set.
pub const ENTAILMENT_JUDGE: Template = Template {
    name: "entailment_judge",
    text: "Classify the relationship between the premise and the hypothesis as Entailment, Neutral, or Contradiction.\nPremise: [premise]\nHypothesis: [hypothesis]\nAnswer with exactly one of: Entailment, Neutral, Contradiction.",
    slots: &["[premise]", "[hypothesis]"],
};

impl JudgePromptEntailer {
    pub fn new(chat: Arc<dyn ChatBackend>) -> Self {
        let id = format!("judge-entailer:{}", chat.id());
        JudgePromptEntailer {
            id,
            chat,
            decode: DecodeParams {
                temperature: 0.0,
                max_tokens: 16,
                seed: None,
            },
        }
    }
}

impl EntailmentBackend for JudgePromptEntailer {
    fn id(&self) -> &str {
        &self.id
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<String, BackendError> {
        let prompt = ENTAILMENT_JUDGE
            .render(&[("[premise]", premise), ("[hypothesis]", hypothesis)])
            .map_err(|e| BackendError::fatal(e.to_string()))?;
        self.chat.complete(&CompletionRequest {
            role: ModelRole::Entailer,
            template: ENTAILMENT_JUDGE.name.to_string(),
            prompt,
            decode: self.decode,
            attempt: 0,
        })
    }
}
