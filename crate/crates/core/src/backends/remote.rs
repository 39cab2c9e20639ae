//! Blocking `tvseg/1` client.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, *};
use super::{
    BackendConfig, BackendError, ChatMessage, ChatModel, Detector, ImagePayload, RawBox, RawCandidate, Segmenter,
};

#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    bearer: Option<String>,
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteClient {
    pub fn new(base: impl Into<String>, cfg: &BackendConfig) -> Result<Self, BackendError> {
        let bearer = match &cfg.bearer_token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Config(format!("bearer token variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(RemoteClient {
            base: base.into(),
            client,
            max_retries: cfg.max_retries,
            bearer,
        })
    }

    fn attempt<Resp: DeserializeOwned>(&self, url: &str, body: &[u8]) -> Result<Resp, Attempt> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .header(PROTOCOL_HEADER, PROTOCOL_VERSION)
            .body(body.to_vec());
        if let Some(token) = &self.bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout { attempts: 0 })
            } else {
                Attempt::Retry(BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        })?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout { attempts: 0 })
            } else {
                Attempt::Retry(BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        })?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| Attempt::Fatal(BackendError::Malformed(format!("response envelope: {e}"))));
        }
        let (code, message) = match serde_json::from_slice::<ErrorEnvelope>(&bytes) {
            Ok(env) => (env.error.code, env.error.message),
            Err(_) => ("unknown".to_string(), String::from_utf8_lossy(&bytes).into_owned()),
        };
        if status.is_server_error() {
            Err(Attempt::Retry(BackendError::Transport {
                attempts: 0,
                message: format!("HTTP {} ({code}): {message}", status.as_u16()),
            }))
        } else {
            Err(Attempt::Fatal(BackendError::Rejected {
                status: status.as_u16(),
                code,
                message,
            }))
        }
    }

    /// POSTs `req`, retrying transport failures and 5xx replies up to
    /// `max_retries` times.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base, path);
        let body = wire::to_body(req);
        let attempts = self.max_retries + 1;
        let mut last = None;
        for n in 1..=attempts {
            match self.attempt(&url, &body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    tracing::debug!(url = %url, attempt = n, error = %e, "retrying backend request");
                    last = Some(e);
                }
            }
        }
        Err(match last {
            Some(BackendError::Timeout { .. }) => BackendError::Timeout { attempts },
            Some(BackendError::Transport { message, .. }) => BackendError::Transport { attempts, message },
            Some(other) => other,
            None => BackendError::Transport {
                attempts,
                message: "no attempt made".into(),
            },
        })
    }
}

impl ChatModel for RemoteClient {
    fn chat(&self, image: &ImagePayload, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let req = ChatRequest {
            image: Some(WireImage::from_payload(image)),
            messages: messages.to_vec(),
        };
        let resp: ChatResponse = self.post(CHAT_PATH, &req)?;
        Ok(resp.text)
    }
}

impl Detector for RemoteClient {
    fn detect_raw(&self, image: &ImagePayload, phrase: &str) -> Result<Vec<RawBox>, BackendError> {
        let req = DetectRequest {
            image: WireImage::from_payload(image),
            phrase: phrase.to_string(),
        };
        let resp: DetectResponse = self.post(DETECT_PATH, &req)?;
        Ok(resp.boxes.into_iter().map(RawBox::from).collect())
    }
}

impl Segmenter for RemoteClient {
    fn segment_raw(&self, image: &ImagePayload, boxes: &[RawBox]) -> Result<Vec<RawCandidate>, BackendError> {
        let req = SegmentRequest {
            image: WireImage::from_payload(image),
            boxes: boxes.iter().copied().map(WireBox::from).collect(),
        };
        let resp: SegmentResponse = self.post(SEGMENT_PATH, &req)?;
        resp.candidates.iter().map(WireCandidate::to_raw).collect()
    }

    fn segment_auto_raw(&self, image: &ImagePayload) -> Result<Vec<RawCandidate>, BackendError> {
        let req = SegmentAutoRequest {
            image: WireImage::from_payload(image),
        };
        let resp: SegmentResponse = self.post(SEGMENT_AUTO_PATH, &req)?;
        resp.candidates.iter().map(WireCandidate::to_raw).collect()
    }
}
