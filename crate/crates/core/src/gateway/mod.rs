//! Provider-agnostic chat completion with record/replay transcripts,
//! structured-output validation and token/cost accounting.
//!
//! Every model call in the pipeline is a [`ChatRequest`] tagged with the
//! pipeline stage that issued it. The [`Gateway`] decides where the answer
//! comes from (network, transcript, or both) and appends one ledger entry
//! per completed call regardless of the source.

mod http;
mod json;
mod ledger;
pub mod mock;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::HttpBackend;
pub use json::extract_json;
pub use ledger::{CostLedger, GroupBy, LedgerEntry, Price, PriceTable, Totals};
pub use transcript::{Transcript, TranscriptEntry};

// ---------------------------------------------------------------------------
// Stage tags
// ---------------------------------------------------------------------------

/// Pipeline stage that issued a request; drives model routing, default
/// temperature and ledger attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    DagClean,
    DagSplit,
    DagDecompose,
    DagVisual,
    PptOutline,
    PptSlide,
    PptAudit,
    PptRevise,
    PosterOutline,
    PrOutline,
    PrFinal,
}

/// The four cost-report columns: graph construction plus the three backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageGroup {
    Dag,
    Ppt,
    Poster,
    Pr,
}

impl StageGroup {
    pub const ALL: [StageGroup; 4] = [StageGroup::Dag, StageGroup::Ppt, StageGroup::Poster, StageGroup::Pr];

    pub fn as_str(self) -> &'static str {
        match self {
            StageGroup::Dag => "dag",
            StageGroup::Ppt => "ppt",
            StageGroup::Poster => "poster",
            StageGroup::Pr => "pr",
        }
    }
}

impl StageTag {
    pub const ALL: [StageTag; 11] = [
        StageTag::DagClean,
        StageTag::DagSplit,
        StageTag::DagDecompose,
        StageTag::DagVisual,
        StageTag::PptOutline,
        StageTag::PptSlide,
        StageTag::PptAudit,
        StageTag::PptRevise,
        StageTag::PosterOutline,
        StageTag::PrOutline,
        StageTag::PrFinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::DagClean => "dag_clean",
            StageTag::DagSplit => "dag_split",
            StageTag::DagDecompose => "dag_decompose",
            StageTag::DagVisual => "dag_visual",
            StageTag::PptOutline => "ppt_outline",
            StageTag::PptSlide => "ppt_slide",
            StageTag::PptAudit => "ppt_audit",
            StageTag::PptRevise => "ppt_revise",
            StageTag::PosterOutline => "poster_outline",
            StageTag::PrOutline => "pr_outline",
            StageTag::PrFinal => "pr_final",
        }
    }

    pub fn group(self) -> StageGroup {
        match self {
            StageTag::DagClean | StageTag::DagSplit | StageTag::DagDecompose | StageTag::DagVisual => {
                StageGroup::Dag
            }
            StageTag::PptOutline | StageTag::PptSlide | StageTag::PptAudit | StageTag::PptRevise => {
                StageGroup::Ppt
            }
            StageTag::PosterOutline => StageGroup::Poster,
            StageTag::PrOutline | StageTag::PrFinal => StageGroup::Pr,
        }
    }

    pub fn default_temperature(self) -> f32 {
        match self {
            StageTag::DagClean | StageTag::DagSplit => 0.0,
            StageTag::DagDecompose => 0.2,
            StageTag::DagVisual => 1.0,
            StageTag::PptOutline => 0.0,
            StageTag::PptSlide | StageTag::PptAudit | StageTag::PptRevise => 1.0,
            StageTag::PosterOutline => 1.0,
            StageTag::PrOutline => 0.0,
            StageTag::PrFinal => 0.4,
        }
    }

    /// Stages served by the vision-language model.
    pub fn uses_vision_model(self) -> bool {
        matches!(self, StageTag::DagVisual | StageTag::PptAudit)
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown stage tag `{s}`"))
    }
}

// ---------------------------------------------------------------------------
// Requests and responses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image { path: PathBuf, media_type: String },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Part::Text(s.into())
    }

    /// Image attachment; the media type is inferred from the file extension.
    pub fn image(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let media_type = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("jpg" | "jpeg") => "image/jpeg",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            Some("bmp") => "image/bmp",
            _ => "image/png",
        };
        Part::Image { path, media_type: media_type.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user_parts: Vec<Part>,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub stage: StageTag,
}

impl ChatRequest {
    pub fn check(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.user_parts.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no user parts".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Stable content hash of model, system prompt, text parts, image bytes and temperature.
    ///
    /// Images contribute the SHA-256 of their bytes, not their path, so keys
    /// survive moving the bundle.
    pub fn digest(&self) -> Result<String, GatewayError> {
        let mut hasher = Sha256::new();
        let mut field = |tag: &str, bytes: &[u8]| {
            hasher.update(tag.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field("model", self.model.as_bytes());
        field("system", self.system.as_bytes());
        for part in &self.user_parts {
            match part {
                Part::Text(t) => field("text", t.as_bytes()),
                Part::Image { path, .. } => {
                    let bytes = std::fs::read(path).map_err(|e| {
                        GatewayError::Io(format!("reading attachment {}: {e}", path.display()))
                    })?;
                    field("image", &Sha256::digest(&bytes));
                }
            }
        }
        field("temperature", format!("{:.3}", self.temperature).as_bytes());
        Ok(hex(&hasher.finalize()))
    }

    /// Concatenated text parts, for backends and test doubles.
    pub fn user_text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

// ---------------------------------------------------------------------------
// Backends and errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication: {0}")]
    Auth(String),
}

/// Something that can answer a chat request over the wire.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("[{stage}] transport failed after {attempts} attempts: {message}")]
    Transport { stage: StageTag, attempts: u32, message: String },
    #[error("[{stage}] no recorded response for request {digest} in replay transcript")]
    ReplayMiss { stage: StageTag, digest: String },
    #[error("authentication: {0}")]
    Auth(String),
    #[error("no JSON object or array found in model output")]
    NoJsonFound,
    #[error("[{stage}] output still invalid after {attempts} attempts: {}", .violations.join("; "))]
    ValidationExhausted { stage: StageTag, attempts: u32, violations: Vec<String> },
    #[error("gateway i/o: {0}")]
    Io(String),
}

impl GatewayError {
    /// True when the model itself is unreachable (as opposed to a replay or
    /// validation failure); callers with a deterministic fallback use this.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. } | GatewayError::Auth(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    /// Always call the backend; nothing is persisted.
    Live,
    /// Serve from the transcript when possible, otherwise call and persist.
    Record,
    /// Serve only from the transcript; never touch the network.
    Replay,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which model serves which stage, at what temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRouting {
    pub llm_model: String,
    pub vlm_model: String,
    /// Overrides the vision model for slide audits only.
    pub audit_model: Option<String>,
    pub temperatures: BTreeMap<StageTag, f32>,
    pub max_output_tokens: u32,
}

impl Default for ModelRouting {
    fn default() -> Self {
        Self {
            llm_model: "gpt-4o".into(),
            vlm_model: "gpt-4o".into(),
            audit_model: None,
            temperatures: BTreeMap::new(),
            max_output_tokens: 8192,
        }
    }
}

impl ModelRouting {
    pub fn model_for(&self, stage: StageTag) -> &str {
        match stage {
            StageTag::PptAudit => self.audit_model.as_deref().unwrap_or(&self.vlm_model),
            s if s.uses_vision_model() => &self.vlm_model,
            _ => &self.llm_model,
        }
    }

    pub fn temperature_for(&self, stage: StageTag) -> f32 {
        self.temperatures
            .get(&stage)
            .copied()
            .unwrap_or_else(|| stage.default_temperature())
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub mode: TranscriptMode,
    /// Transcript file; loaded in record/replay mode, appended to in record mode.
    pub transcript_path: Option<PathBuf>,
    pub transport_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    pub validation_retries: u32,
    pub routing: ModelRouting,
    pub prices: PriceTable,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: TranscriptMode::Live,
            transcript_path: None,
            transport_attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
            validation_retries: 2,
            routing: ModelRouting::default(),
            prices: PriceTable::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Option<Arc<dyn ChatBackend>>,
    config: GatewayConfig,
    transcript: Mutex<Transcript>,
    ledger: Mutex<CostLedger>,
    limiter: Limiter,
    network_calls: AtomicUsize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.config.mode)
            .field("has_backend", &self.backend.is_some())
            .finish()
    }
}

impl Gateway {
    /// Builds a gateway; record and replay modes load `config.transcript_path` when it exists.
    pub fn new(config: GatewayConfig, backend: Option<Arc<dyn ChatBackend>>) -> Result<Self, GatewayError> {
        let transcript = match (&config.mode, &config.transcript_path) {
            (TranscriptMode::Live, _) | (_, None) => Transcript::default(),
            (_, Some(path)) if path.exists() => Transcript::load(path)?,
            (TranscriptMode::Replay, Some(path)) => {
                return Err(GatewayError::Io(format!("replay transcript {} not found", path.display())))
            }
            (TranscriptMode::Record, Some(_)) => Transcript::default(),
        };
        Ok(Self {
            backend,
            ledger: Mutex::new(CostLedger::new(config.prices.clone())),
            limiter: Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                max: config.max_in_flight.max(1),
            },
            transcript: Mutex::new(transcript),
            network_calls: AtomicUsize::new(0),
            config,
        })
    }

    /// A replay-only gateway over an in-memory transcript.
    pub fn replay(transcript: Transcript) -> Self {
        let config = GatewayConfig { mode: TranscriptMode::Replay, ..GatewayConfig::default() };
        Self {
            backend: None,
            ledger: Mutex::new(CostLedger::new(PriceTable::default())),
            limiter: Limiter { in_flight: Mutex::new(0), freed: Condvar::new(), max: 4 },
            transcript: Mutex::new(transcript),
            network_calls: AtomicUsize::new(0),
            config,
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> TranscriptMode {
        self.config.mode
    }

    pub fn validation_retries(&self) -> u32 {
        self.config.validation_retries
    }

    /// Requests that reached the backend so far.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().expect("ledger poisoned").clone()
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript poisoned").clone()
    }

    /// Builds a request for `stage` with the routed model and temperature.
    pub fn request(&self, stage: StageTag, system: &str, user_parts: Vec<Part>) -> ChatRequest {
        let routing = &self.config.routing;
        ChatRequest {
            model: routing.model_for(stage).to_string(),
            system: system.to_string(),
            user_parts,
            temperature: routing.temperature_for(stage),
            max_output_tokens: routing.max_output_tokens,
            stage,
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.check()?;
        let digest = request.digest()?;

        if self.config.mode != TranscriptMode::Live {
            let hit = self.transcript.lock().expect("transcript poisoned").get(&digest).cloned();
            if let Some(entry) = hit {
                let response = entry.response();
                self.account(request, response.usage);
                return Ok(response);
            }
            if self.config.mode == TranscriptMode::Replay {
                return Err(GatewayError::ReplayMiss { stage: request.stage, digest });
            }
        }

        let response = self.send_with_retries(request)?;
        if self.config.mode == TranscriptMode::Record {
            let entry = TranscriptEntry::new(&digest, request.stage, &response);
            let mut transcript = self.transcript.lock().expect("transcript poisoned");
            if transcript.get(&digest).is_none() {
                if let Some(path) = &self.config.transcript_path {
                    transcript::append(path, &entry)?;
                }
                transcript.insert(entry);
            }
        }
        self.account(request, response.usage);
        Ok(response)
    }

    fn account(&self, request: &ChatRequest, usage: Usage) {
        self.ledger
            .lock()
            .expect("ledger poisoned")
            .record(request.stage, &request.model, usage);
    }

    fn send_with_retries(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let backend = self.backend.as_ref().ok_or_else(|| {
            GatewayError::Auth("no model backend configured (is PAPERX_API_KEY set?)".into())
        })?;
        let attempts = self.config.transport_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(delay);
            }
            let _slot = self.limiter.acquire();
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match backend.send(request) {
                Ok(response) => return Ok(response),
                Err(BackendError::Auth(msg)) => return Err(GatewayError::Auth(msg)),
                Err(BackendError::Transport(msg)) => {
                    log::warn!("[{}] attempt {} failed: {msg}", request.stage, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport { stage: request.stage, attempts, message: last })
    }

    /// Completes `request` and parses the answer with `parse`; on violations
    /// the request is re-issued with the violation list appended, at most
    /// `max_retries` times.
    pub fn complete_checked<T>(
        &self,
        request: &ChatRequest,
        max_retries: u32,
        parse: impl Fn(&str) -> Result<T, Vec<String>>,
    ) -> Result<T, GatewayError> {
        let mut current = request.clone();
        let mut violations = Vec::new();
        for _ in 0..=max_retries {
            let response = self.complete(&current)?;
            match parse(&response.text) {
                Ok(value) => return Ok(value),
                Err(found) => {
                    log::debug!("[{}] rejected output: {}", request.stage, found.join("; "));
                    violations = found;
                    current = with_feedback(request, &violations);
                }
            }
        }
        Err(GatewayError::ValidationExhausted {
            stage: request.stage,
            attempts: max_retries + 1,
            violations,
        })
    }

    /// JSON flavour of [`Gateway::complete_checked`]: extracts the first JSON
    /// value from the answer and runs the pure `validator` over it.
    pub fn complete_validated(
        &self,
        request: &ChatRequest,
        validator: impl Fn(&serde_json::Value) -> Vec<String>,
        max_retries: u32,
    ) -> Result<serde_json::Value, GatewayError> {
        self.complete_checked(request, max_retries, |text| {
            let value = extract_json(text).map_err(|e| vec![e.to_string()])?;
            let violations = validator(&value);
            if violations.is_empty() {
                Ok(value)
            } else {
                Err(violations)
            }
        })
    }
}

fn with_feedback(request: &ChatRequest, violations: &[String]) -> ChatRequest {
    let mut retry = request.clone();
    let mut note = String::from(
        "Your previous answer was rejected for the following reasons:\n",
    );
    for v in violations {
        note.push_str("- ");
        note.push_str(v);
        note.push('\n');
    }
    note.push_str("Produce a corrected answer that satisfies every rule above.");
    retry.user_parts.push(Part::Text(note));
    retry
}
