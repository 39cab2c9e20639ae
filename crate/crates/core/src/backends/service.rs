//! Server-side request handling for `tvseg/1`, independent of the HTTP stack.

use serde::de::DeserializeOwned;

use super::wire::*;
use super::{BackendError, ChatBackend, DetectorBackend, RawBox, SegmenterBackend};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Reply {
    fn ok<T: serde::Serialize>(value: &T) -> Self {
        Reply {
            status: 200,
            body: to_body(value),
        }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Reply {
            status,
            body: to_body(&ErrorEnvelope::new(code, message)),
        }
    }
}

fn error_reply(e: &BackendError) -> Reply {
    let (status, code) = match e {
        BackendError::Precondition(_) | BackendError::Malformed(_) | BackendError::Geometry(_) => (400, "bad_request"),
        BackendError::MissingGroundTruth(_) | BackendError::NoScript(_) => (404, "not_found"),
        BackendError::Unsupported(_) => (501, "unsupported"),
        BackendError::Rejected { status, .. } => (*status, "upstream_rejected"),
        BackendError::Transport { .. } | BackendError::Timeout { .. } => (502, "upstream_unavailable"),
        BackendError::Config(_) => (500, "internal"),
    };
    Reply::error(status, code, e.to_string())
}

/// Hosts backend handles behind the wire protocol. Roles left as `None`
/// answer 501.
#[derive(Debug, Clone, Default)]
pub struct WireService {
    pub chat: Option<ChatBackend>,
    pub detector: Option<DetectorBackend>,
    pub segmenter: Option<SegmenterBackend>,
    pub auto: Option<SegmenterBackend>,
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| Reply::error(400, "bad_request", format!("invalid request body: {e}")))
}

fn not_hosted(role: &str) -> Reply {
    Reply::error(501, "unsupported", format!("no {role} backend is hosted here"))
}

impl WireService {
    pub fn handle(&self, path: &str, body: &[u8]) -> Reply {
        let result = match path {
            CHAT_PATH => self.chat(body),
            DETECT_PATH => self.detect(body),
            SEGMENT_PATH => self.segment(body),
            SEGMENT_AUTO_PATH => self.segment_auto(body),
            _ => Err(Reply::error(404, "not_found", format!("unknown route {path}"))),
        };
        result.unwrap_or_else(|r| r)
    }

    fn chat(&self, body: &[u8]) -> Result<Reply, Reply> {
        let backend = self.chat.as_ref().ok_or_else(|| not_hosted("chat"))?;
        let req: ChatRequest = parse(body)?;
        let image = req
            .image
            .as_ref()
            .ok_or_else(|| Reply::error(400, "bad_request", "chat request carries no image"))?
            .to_payload()
            .map_err(|e| error_reply(&e))?;
        if req.messages.iter().all(|m| m.text.trim().is_empty()) {
            return Err(Reply::error(400, "bad_request", "dialog is empty"));
        }
        let text = backend
            .inner()
            .chat(&image, &req.messages)
            .map_err(|e| error_reply(&e))?;
        Ok(Reply::ok(&ChatResponse { text }))
    }

    fn detect(&self, body: &[u8]) -> Result<Reply, Reply> {
        let backend = self.detector.as_ref().ok_or_else(|| not_hosted("detector"))?;
        let req: DetectRequest = parse(body)?;
        if req.phrase.trim().is_empty() {
            return Err(Reply::error(400, "bad_request", "phrase is empty"));
        }
        let image = req.image.to_payload().map_err(|e| error_reply(&e))?;
        let raw = backend
            .inner()
            .detect_raw(&image, &req.phrase)
            .map_err(|e| error_reply(&e))?;
        let mut boxes = Vec::with_capacity(raw.len());
        for b in raw {
            if let Some(c) = b.clip(image.width(), image.height()).map_err(|e| error_reply(&e))? {
                boxes.push(WireBox::from(RawBox::from(&c)));
            }
        }
        Ok(Reply::ok(&DetectResponse { boxes }))
    }

    fn segment(&self, body: &[u8]) -> Result<Reply, Reply> {
        let backend = self.segmenter.as_ref().ok_or_else(|| not_hosted("segmenter"))?;
        let req: SegmentRequest = parse(body)?;
        let image = req.image.to_payload().map_err(|e| error_reply(&e))?;
        if req.boxes.is_empty() {
            return Err(Reply::error(400, "bad_request", "no box prompts"));
        }
        let mut prompts = Vec::with_capacity(req.boxes.len());
        for (i, b) in req.boxes.iter().enumerate() {
            let raw = RawBox::from(*b);
            match raw.clip(image.width(), image.height()) {
                Ok(Some(_)) => prompts.push(raw),
                Ok(None) => {
                    return Err(Reply::error(
                        400,
                        "bad_request",
                        format!("box {i} has no area inside the image"),
                    ))
                }
                Err(e) => return Err(Reply::error(400, "bad_request", format!("box {i}: {e}"))),
            }
        }
        let candidates = backend
            .inner()
            .segment_raw(&image, &prompts)
            .map_err(|e| error_reply(&e))?;
        Ok(Reply::ok(&SegmentResponse {
            candidates: candidates.iter().map(WireCandidate::from_raw).collect(),
        }))
    }

    fn segment_auto(&self, body: &[u8]) -> Result<Reply, Reply> {
        let backend = self.auto.as_ref().ok_or_else(|| not_hosted("automatic segmenter"))?;
        let req: SegmentAutoRequest = parse(body)?;
        let image = req.image.to_payload().map_err(|e| error_reply(&e))?;
        let candidates = backend.inner().segment_auto_raw(&image).map_err(|e| error_reply(&e))?;
        Ok(Reply::ok(&SegmentResponse {
            candidates: candidates.iter().map(WireCandidate::from_raw).collect(),
        }))
    }
}
