//! Model backend contracts.
//!
//! Three roles are pluggable: a chat model that describes the target, a
//! grounding detector that returns scored boxes for a phrase, and a promptable
//! segmenter that decodes masks from boxes (or from nothing, in automatic
//! mode). Each role is either an in-process deterministic mock or a remote
//! server speaking the `tvseg/1` protocol defined in [`wire`].
//!
//! The free functions [`chat_describe`], [`detect`], [`segment_with_boxes`]
//! and [`segment_auto`] are the only entry points the stages use; they apply
//! the contract checks (clipping, candidate validation) uniformly regardless
//! of what sits behind the handle.

mod gate;
pub mod mocks;
mod payload;
pub mod remote;
pub mod rng;
pub mod service;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gate::Gate;
pub use mocks::{GroundTruthStore, MockSettings};
pub use payload::{ChatMessage, ImagePayload, RawBox, RawCandidate, Role, ScoredMaskCandidate};

use crate::geom::{BoxSet, GeomError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend rejected request with status {status} ({code}): {message}")]
    Rejected { status: u16, code: String, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("operation not supported by {0}")]
    Unsupported(String),
    #[error("no ground truth for source '{0}'")]
    MissingGroundTruth(String),
    #[error("no scripted reply for source '{0}'")]
    NoScript(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    2
}

/// Connection settings for one backend role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// `mock:<name>` or an `http://` base URL.
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Seed for mock streams. Filled from the run seed when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Environment variable holding a static bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token_env: Option<String>,
    /// Upper bound on concurrent requests to this backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        BackendConfig {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            seed: None,
            bearer_token_env: None,
            max_in_flight: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::Config("timeout_ms must be positive".into()));
        }
        if self.max_in_flight == Some(0) {
            return Err(BackendError::Config("max_in_flight must be positive".into()));
        }
        Endpoint::parse(&self.endpoint).map(|_| ())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockKind {
    ScriptedChat,
    OracleDetector,
    OracleSegmenter,
    ThresholdSegmenter,
    GridAuto,
}

impl MockKind {
    pub const ALL: [MockKind; 5] = [
        MockKind::ScriptedChat,
        MockKind::OracleDetector,
        MockKind::OracleSegmenter,
        MockKind::ThresholdSegmenter,
        MockKind::GridAuto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MockKind::ScriptedChat => "scripted-chat",
            MockKind::OracleDetector => "oracle-detector",
            MockKind::OracleSegmenter => "oracle-segmenter",
            MockKind::ThresholdSegmenter => "threshold-segmenter",
            MockKind::GridAuto => "grid-auto",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Mock(MockKind),
    Remote(String),
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Endpoint, BackendError> {
        if let Some(name) = s.strip_prefix("mock:") {
            return MockKind::ALL
                .into_iter()
                .find(|k| k.name() == name)
                .map(Endpoint::Mock)
                .ok_or_else(|| BackendError::Config(format!("unknown mock '{name}'")));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Remote(s.trim_end_matches('/').to_string()));
        }
        Err(BackendError::Config(format!(
            "endpoint '{s}' is neither mock:<name> nor an http(s) URL"
        )))
    }
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, image: &ImagePayload, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

pub trait Detector: Send + Sync {
    fn detect_raw(&self, image: &ImagePayload, phrase: &str) -> Result<Vec<RawBox>, BackendError>;
}

pub trait Segmenter: Send + Sync {
    fn segment_raw(&self, image: &ImagePayload, boxes: &[RawBox]) -> Result<Vec<RawCandidate>, BackendError>;

    fn segment_auto_raw(&self, image: &ImagePayload) -> Result<Vec<RawCandidate>, BackendError>;
}

/// Shareable handle to one backend role.
pub struct Backend<T: ?Sized> {
    config: BackendConfig,
    inner: Arc<T>,
    gate: Option<Arc<Gate>>,
}

impl<T: ?Sized> Clone for Backend<T> {
    fn clone(&self) -> Self {
        Backend {
            config: self.config.clone(),
            inner: Arc::clone(&self.inner),
            gate: self.gate.clone(),
        }
    }
}

impl<T: ?Sized> fmt::Debug for Backend<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("endpoint", &self.config.endpoint)
            .finish()
    }
}

impl<T: ?Sized> Backend<T> {
    pub fn from_parts(config: BackendConfig, inner: Arc<T>) -> Self {
        let gate = config.max_in_flight.map(|n| Arc::new(Gate::new(n)));
        Backend { config, inner, gate }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.endpoint
    }

    pub fn inner(&self) -> &Arc<T> {
        &self.inner
    }

    fn call<R>(&self, f: impl FnOnce(&T) -> R) -> R {
        let _permit = self.gate.as_ref().map(|g| g.acquire());
        f(&self.inner)
    }
}

pub type ChatBackend = Backend<dyn ChatModel>;
pub type DetectorBackend = Backend<dyn Detector>;
pub type SegmenterBackend = Backend<dyn Segmenter>;

/// Everything needed to instantiate mocks.
#[derive(Debug, Clone, Default)]
pub struct MockContext {
    pub settings: MockSettings,
    pub ground_truth: Arc<GroundTruthStore>,
}

pub fn connect_chat(cfg: &BackendConfig, ctx: &MockContext) -> Result<ChatBackend, BackendError> {
    cfg.validate()?;
    let inner: Arc<dyn ChatModel> = match Endpoint::parse(&cfg.endpoint)? {
        Endpoint::Mock(MockKind::ScriptedChat) => Arc::new(mocks::ScriptedChat::from_settings(
            &ctx.settings.scripted_chat,
            Arc::clone(&ctx.ground_truth),
        )?),
        Endpoint::Mock(other) => {
            return Err(BackendError::Config(format!(
                "mock '{}' is not a chat model",
                other.name()
            )))
        }
        Endpoint::Remote(url) => Arc::new(remote::RemoteClient::new(url, cfg)?),
    };
    Ok(Backend::from_parts(cfg.clone(), inner))
}

pub fn connect_detector(cfg: &BackendConfig, ctx: &MockContext) -> Result<DetectorBackend, BackendError> {
    cfg.validate()?;
    let inner: Arc<dyn Detector> = match Endpoint::parse(&cfg.endpoint)? {
        Endpoint::Mock(MockKind::OracleDetector) => Arc::new(mocks::OracleDetector::new(
            ctx.settings.oracle_detector.clone(),
            cfg.seed(),
            Arc::clone(&ctx.ground_truth),
        )),
        Endpoint::Mock(other) => {
            return Err(BackendError::Config(format!(
                "mock '{}' is not a detector",
                other.name()
            )))
        }
        Endpoint::Remote(url) => Arc::new(remote::RemoteClient::new(url, cfg)?),
    };
    Ok(Backend::from_parts(cfg.clone(), inner))
}

pub fn connect_segmenter(cfg: &BackendConfig, ctx: &MockContext) -> Result<SegmenterBackend, BackendError> {
    cfg.validate()?;
    let inner: Arc<dyn Segmenter> = match Endpoint::parse(&cfg.endpoint)? {
        Endpoint::Mock(MockKind::OracleSegmenter) => {
            Arc::new(mocks::OracleSegmenter::new(Arc::clone(&ctx.ground_truth)))
        }
        Endpoint::Mock(MockKind::ThresholdSegmenter) => {
            Arc::new(mocks::ThresholdSegmenter::new(ctx.settings.threshold_segmenter.tau))
        }
        Endpoint::Mock(MockKind::GridAuto) => {
            Arc::new(mocks::GridAutoMock::new(ctx.settings.grid_auto.clone(), cfg.seed()))
        }
        Endpoint::Mock(other) => {
            return Err(BackendError::Config(format!(
                "mock '{}' is not a segmenter",
                other.name()
            )))
        }
        Endpoint::Remote(url) => Arc::new(remote::RemoteClient::new(url, cfg)?),
    };
    Ok(Backend::from_parts(cfg.clone(), inner))
}

/// Asks the chat model about the image and returns its reply verbatim.
pub fn chat_describe(backend: &ChatBackend, image: &ImagePayload, dialog: &str) -> Result<String, BackendError> {
    if dialog.trim().is_empty() {
        return Err(BackendError::Precondition("dialog must not be empty".into()));
    }
    let messages = [ChatMessage {
        role: Role::User,
        text: dialog.to_string(),
    }];
    let reply = backend.call(|m| m.chat(image, &messages))?;
    if reply.is_empty() {
        return Err(BackendError::Malformed("empty chat reply".into()));
    }
    Ok(reply)
}

/// Detector output after clipping to the image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detection {
    pub boxes: BoxSet,
    /// Boxes that had no area left after clipping.
    pub dropped: usize,
}

/// Raw scored boxes for `phrase`, clipped to the image bounds. No
/// suppression or thresholding happens here.
pub fn detect(backend: &DetectorBackend, image: &ImagePayload, phrase: &str) -> Result<Detection, BackendError> {
    if phrase.trim().is_empty() {
        return Err(BackendError::Precondition("phrase must not be empty".into()));
    }
    let raw = backend.call(|d| d.detect_raw(image, phrase))?;
    let mut out = Detection::default();
    for b in raw {
        match b.clip(image.width(), image.height())? {
            Some(clipped) => {
                out.boxes.insert(clipped.with_phrase(phrase));
            }
            None => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        tracing::warn!(
            source = image.source_id(),
            dropped = out.dropped,
            "dropped degenerate boxes after clipping"
        );
    }
    Ok(out)
}

fn validate_candidates(
    image: &ImagePayload,
    raw: Vec<RawCandidate>,
    boxes: Option<&BoxSet>,
) -> Result<Vec<ScoredMaskCandidate>, BackendError> {
    let mut out = Vec::with_capacity(raw.len());
    for c in raw {
        if c.mask.width() != image.width() || c.mask.height() != image.height() {
            return Err(BackendError::Malformed(format!(
                "candidate mask {}x{} does not match image {}x{}",
                c.mask.width(),
                c.mask.height(),
                image.width(),
                image.height()
            )));
        }
        if !(0.0..=1.0).contains(&c.quality) {
            return Err(BackendError::Malformed(format!("quality {} outside [0, 1]", c.quality)));
        }
        let source_box = match (boxes, c.source_index) {
            (Some(set), Some(i)) => Some(
                set.get(i)
                    .cloned()
                    .ok_or_else(|| BackendError::Malformed(format!("source_index {i} out of range")))?,
            ),
            (Some(_), None) => {
                return Err(BackendError::Malformed(
                    "prompted candidate without source_index".into(),
                ))
            }
            (None, _) => None,
        };
        out.push(ScoredMaskCandidate {
            mask: c.mask,
            predicted_quality: c.quality,
            source_index: if boxes.is_some() { c.source_index } else { None },
            source_box,
        });
    }
    Ok(out)
}

/// Box-prompted mask decoding. Every box yields at least one candidate.
pub fn segment_with_boxes(
    backend: &SegmenterBackend,
    image: &ImagePayload,
    boxes: &BoxSet,
) -> Result<Vec<ScoredMaskCandidate>, BackendError> {
    if boxes.is_empty() {
        return Err(BackendError::Precondition("at least one box prompt is required".into()));
    }
    let prompts: Vec<RawBox> = boxes.iter().map(RawBox::from).collect();
    let raw = backend.call(|s| s.segment_raw(image, &prompts))?;
    let out = validate_candidates(image, raw, Some(boxes))?;
    for i in 0..boxes.len() {
        if !out.iter().any(|c| c.source_index == Some(i)) {
            return Err(BackendError::Malformed(format!("no candidate for box {i}")));
        }
    }
    Ok(out)
}

/// Unprompted ("everything mode") segmentation.
pub fn segment_auto(
    backend: &SegmenterBackend,
    image: &ImagePayload,
) -> Result<Vec<ScoredMaskCandidate>, BackendError> {
    let raw = backend.call(|s| s.segment_auto_raw(image))?;
    validate_candidates(image, raw, None)
}
