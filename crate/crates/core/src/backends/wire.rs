//! `tvseg/1` HTTP/JSON wire types.
//!
//! Field order in each struct is the canonical on-wire order and bodies are
//! written without insignificant whitespace, so `serialize -> parse ->
//! serialize` is byte-stable. Coordinates are half-open pixels, scores lie in
//! `[0, 1]`, masks travel as canonical RLE and images as base64 raw bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::payload::{ChatMessage, ImagePayload, RawBox, RawCandidate};
use super::BackendError;
use crate::geom::{rle_decode, rle_encode, RleMask};

pub const PROTOCOL_VERSION: &str = "tvseg/1";
pub const PROTOCOL_HEADER: &str = "x-tvseg-protocol";

pub const CHAT_PATH: &str = "/v1/chat";
pub const DETECT_PATH: &str = "/v1/detect";
pub const SEGMENT_PATH: &str = "/v1/segment";
pub const SEGMENT_AUTO_PATH: &str = "/v1/segment_auto";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireImage {
    pub w: u32,
    pub h: u32,
    pub c: u8,
    pub b64: String,
    /// Source identifier; lets deterministic mocks key their streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl WireImage {
    pub fn from_payload(image: &ImagePayload) -> Self {
        WireImage {
            w: image.width(),
            h: image.height(),
            c: image.channels(),
            b64: STANDARD.encode(image.pixels()),
            id: Some(image.source_id().to_string()),
        }
    }

    /// Decodes the pixels. Without an `id`, the source id falls back to a
    /// content hash of the pixel bytes.
    pub fn to_payload(&self) -> Result<ImagePayload, BackendError> {
        let pixels = STANDARD
            .decode(self.b64.as_bytes())
            .map_err(|e| BackendError::Malformed(format!("image b64: {e}")))?;
        let id = match &self.id {
            Some(id) => id.clone(),
            None => super::rng::content_id(&pixels),
        };
        ImagePayload::new(self.w, self.h, self.c, pixels, id).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<WireImage>,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub image: WireImage,
    pub phrase: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: f64,
}

impl From<RawBox> for WireBox {
    fn from(b: RawBox) -> Self {
        WireBox {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            score: b.score,
        }
    }
}

impl From<WireBox> for RawBox {
    fn from(b: WireBox) -> Self {
        RawBox {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            score: b.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub image: WireImage,
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentAutoRequest {
    pub image: WireImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRle {
    pub w: u32,
    pub h: u32,
    pub runs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub rle: WireRle,
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_index: Option<usize>,
}

impl WireCandidate {
    pub fn from_raw(c: &RawCandidate) -> Self {
        let rle = rle_encode(&c.mask);
        WireCandidate {
            rle: WireRle {
                w: rle.width,
                h: rle.height,
                runs: rle.runs,
            },
            quality: c.quality,
            source_index: c.source_index,
        }
    }

    pub fn to_raw(&self) -> Result<RawCandidate, BackendError> {
        let rle = RleMask {
            width: self.rle.w,
            height: self.rle.h,
            runs: self.rle.runs.clone(),
        };
        let mask = rle_decode(&rle).map_err(|e| BackendError::Malformed(format!("rle: {e}")))?;
        Ok(RawCandidate {
            mask,
            quality: self.quality,
            source_index: self.source_index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

impl ErrorEnvelope {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        ErrorEnvelope {
            error: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

/// Canonical body bytes.
pub fn to_body<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("wire types always serialize")
}
