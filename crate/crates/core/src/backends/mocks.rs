//! Deterministic in-process backends.
//!
//! Every mock is a pure function of its settings, its seed and the request.
//! Randomness comes from [`stream_rng`] keyed on the image's source id, so
//! results do not depend on call order or thread.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng::{sha256_hex, stream_rng};
use super::{BackendError, ChatMessage, ChatModel, Detector, ImagePayload, RawBox, RawCandidate, Segmenter};
use crate::geom::{connected_components, mask_to_bbox, BinaryMask, BoxMode};

/// Ground truth the oracle mocks are allowed to peek at, keyed by source id.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthStore {
    entries: HashMap<String, GroundTruthEntry>,
}

#[derive(Debug, Clone)]
pub struct GroundTruthEntry {
    pub concept: String,
    pub mask: Option<BinaryMask>,
}

impl GroundTruthStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source_id: impl Into<String>, concept: impl Into<String>, mask: Option<BinaryMask>) {
        self.entries.insert(
            source_id.into(),
            GroundTruthEntry {
                concept: concept.into(),
                mask,
            },
        );
    }

    pub fn get(&self, source_id: &str) -> Option<&GroundTruthEntry> {
        self.entries.get(source_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn mask(&self, source_id: &str) -> Result<&BinaryMask, BackendError> {
        self.get(source_id)
            .and_then(|e| e.mask.as_ref())
            .ok_or_else(|| BackendError::MissingGroundTruth(source_id.to_string()))
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedChatSettings {
    /// JSON file with `[{source_id, dialog_sha256?, reply}]` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub fallback: bool,
}

impl Default for ScriptedChatSettings {
    fn default() -> Self {
        ScriptedChatSettings {
            script: None,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleDetectorSettings {
    /// Standard deviation (pixels) of the per-coordinate Gaussian jitter.
    pub jitter: f64,
    pub distractors: u32,
    /// Scale of the half-normal deduction from the ground-truth box score.
    pub score_noise: f64,
    /// Extra jitter `prompt_sensitivity / word_count(phrase)`; longer, more
    /// descriptive phrases localize better.
    pub prompt_sensitivity: f64,
    /// Return no boxes at all.
    pub blind: bool,
    pub box_mode: BoxMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSegmenterSettings {
    pub tau: u8,
}

impl Default for ThresholdSegmenterSettings {
    fn default() -> Self {
        ThresholdSegmenterSettings { tau: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridAutoSettings {
    /// Grid spacing in pixels.
    pub cell: u32,
    pub tau: u8,
}

impl Default for GridAutoSettings {
    fn default() -> Self {
        GridAutoSettings { cell: 4, tau: 128 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockSettings {
    pub scripted_chat: ScriptedChatSettings,
    pub oracle_detector: OracleDetectorSettings,
    pub threshold_segmenter: ThresholdSegmenterSettings,
    pub grid_auto: GridAutoSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialog_sha256: Option<String>,
    pub reply: String,
}

/// Replies from a lookup table keyed on `(source_id, sha256(dialog))`.
///
/// An entry without `dialog_sha256` answers any dialog for that source.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    replies: HashMap<(String, Option<String>), String>,
    fallback: bool,
    ground_truth: Arc<GroundTruthStore>,
}

impl ScriptedChat {
    pub fn new(entries: Vec<ScriptEntry>, fallback: bool, ground_truth: Arc<GroundTruthStore>) -> Self {
        let mut replies = HashMap::new();
        for e in entries {
            replies.entry((e.source_id, e.dialog_sha256)).or_insert(e.reply);
        }
        ScriptedChat {
            replies,
            fallback,
            ground_truth,
        }
    }

    pub fn from_settings(
        settings: &ScriptedChatSettings,
        ground_truth: Arc<GroundTruthStore>,
    ) -> Result<Self, BackendError> {
        let entries = match &settings.script {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| BackendError::Config(format!("chat script {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| BackendError::Config(format!("chat script {}: {e}", path.display())))?
            }
            None => Vec::new(),
        };
        Ok(Self::new(entries, settings.fallback, ground_truth))
    }

    pub fn dialog_key(messages: &[ChatMessage]) -> String {
        let joined: Vec<&str> = messages.iter().map(|m| m.text.as_str()).collect();
        sha256_hex(joined.join("\n").as_bytes())
    }

    /// Reply used for sources with no script entry: names the concept and
    /// nothing else.
    pub fn fallback_reply(concept: Option<&str>) -> String {
        match concept {
            Some(c) => format!("The image appears to show a {c}."),
            None => "The image appears to show the requested object.".to_string(),
        }
    }
}

impl ChatModel for ScriptedChat {
    fn chat(&self, image: &ImagePayload, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let id = image.source_id().to_string();
        let exact = (id.clone(), Some(Self::dialog_key(messages)));
        if let Some(r) = self
            .replies
            .get(&exact)
            .or_else(|| self.replies.get(&(id.clone(), None)))
        {
            return Ok(r.clone());
        }
        if self.fallback {
            let concept = self.ground_truth.get(&id).map(|e| e.concept.as_str());
            Ok(Self::fallback_reply(concept))
        } else {
            Err(BackendError::NoScript(id))
        }
    }
}

/// Detector that returns the ground-truth box(es), optionally perturbed.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    settings: OracleDetectorSettings,
    seed: u64,
    ground_truth: Arc<GroundTruthStore>,
}

impl OracleDetector {
    pub fn new(settings: OracleDetectorSettings, seed: u64, ground_truth: Arc<GroundTruthStore>) -> Self {
        OracleDetector {
            settings,
            seed,
            ground_truth,
        }
    }

    pub fn effective_jitter(&self, phrase: &str) -> f64 {
        let words = phrase.split_whitespace().count().max(1);
        self.settings.jitter + self.settings.prompt_sensitivity / words as f64
    }
}

impl Detector for OracleDetector {
    fn detect_raw(&self, image: &ImagePayload, phrase: &str) -> Result<Vec<RawBox>, BackendError> {
        let id = image.source_id();
        let gt = self.ground_truth.mask(id)?;
        if self.settings.blind {
            return Ok(Vec::new());
        }
        let mut rng = stream_rng(self.seed, id, "detect");
        let sigma = self.effective_jitter(phrase);
        let mut out = Vec::new();
        let mut floor_score = 1.0f64;
        if !gt.is_empty() {
            for b in mask_to_bbox(gt, self.settings.box_mode)?.iter() {
                // Draw the same variates whatever sigma is, so runs that only
                // differ in jitter perturb each box in the same direction.
                let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let n: f64 = rng.sample(StandardNormal);
                let score = (1.0 - n.abs() * self.settings.score_noise).clamp(0.0, 1.0);
                floor_score = floor_score.min(score);
                out.push(RawBox {
                    x0: f64::from(b.x_min()) + (sigma * z[0]).round(),
                    y0: f64::from(b.y_min()) + (sigma * z[1]).round(),
                    x1: f64::from(b.x_max()) + (sigma * z[2]).round(),
                    y1: f64::from(b.y_max()) + (sigma * z[3]).round(),
                    score,
                });
            }
        }
        let (w, h) = (image.width(), image.height());
        for _ in 0..self.settings.distractors {
            let bw = rng.random_range(1..=(w / 2).max(1));
            let bh = rng.random_range(1..=(h / 2).max(1));
            let x0 = rng.random_range(0..=w - bw);
            let y0 = rng.random_range(0..=h - bh);
            let score = floor_score * rng.random_range(0.05..0.95);
            out.push(RawBox {
                x0: f64::from(x0),
                y0: f64::from(y0),
                x1: f64::from(x0 + bw),
                y1: f64::from(y0 + bh),
                score,
            });
        }
        Ok(out)
    }
}

fn unsupported(name: &str) -> BackendError {
    BackendError::Unsupported(name.to_string())
}

/// Segmenter whose candidate for a box is the ground truth inside that box.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    ground_truth: Arc<GroundTruthStore>,
}

impl OracleSegmenter {
    pub fn new(ground_truth: Arc<GroundTruthStore>) -> Self {
        OracleSegmenter { ground_truth }
    }
}

fn clipped_mask(base: &BinaryMask, b: &RawBox, image: &ImagePayload) -> Result<BinaryMask, BackendError> {
    Ok(match b.clip(image.width(), image.height())? {
        Some(c) => base.crop_to(c.x_min(), c.y_min(), c.x_max(), c.y_max()),
        None => BinaryMask::new(image.width(), image.height())?,
    })
}

impl Segmenter for OracleSegmenter {
    fn segment_raw(&self, image: &ImagePayload, boxes: &[RawBox]) -> Result<Vec<RawCandidate>, BackendError> {
        let gt = self.ground_truth.mask(image.source_id())?;
        if !gt.same_shape(&BinaryMask::new(image.width(), image.height())?) {
            return Err(BackendError::Precondition(
                "ground truth shape differs from image".into(),
            ));
        }
        let total = gt.foreground_count();
        boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mask = clipped_mask(gt, b, image)?;
                let quality = if total == 0 {
                    0.0
                } else {
                    mask.foreground_count() as f64 / total as f64
                };
                Ok(RawCandidate {
                    mask,
                    quality,
                    source_index: Some(i),
                })
            })
            .collect()
    }

    fn segment_auto_raw(&self, _image: &ImagePayload) -> Result<Vec<RawCandidate>, BackendError> {
        Err(unsupported("oracle-segmenter (automatic mode)"))
    }
}

/// Segmenter that keeps the bright pixels (`intensity >= tau`) inside a box.
#[derive(Debug, Clone)]
pub struct ThresholdSegmenter {
    tau: u8,
}

impl ThresholdSegmenter {
    pub fn new(tau: u8) -> Self {
        ThresholdSegmenter { tau }
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment_raw(&self, image: &ImagePayload, boxes: &[RawBox]) -> Result<Vec<RawCandidate>, BackendError> {
        let bright = image.threshold(self.tau);
        boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mask = clipped_mask(&bright, b, image)?;
                let area = b.clip(image.width(), image.height())?.map(|c| c.area()).unwrap_or(0);
                let quality = if area == 0 {
                    0.0
                } else {
                    mask.foreground_count() as f64 / area as f64
                };
                Ok(RawCandidate {
                    mask,
                    quality,
                    source_index: Some(i),
                })
            })
            .collect()
    }

    fn segment_auto_raw(&self, _image: &ImagePayload) -> Result<Vec<RawCandidate>, BackendError> {
        Err(unsupported("threshold-segmenter (automatic mode)"))
    }
}

/// Automatic-mode mock: probes a seeded point grid and returns the bright
/// connected region under each probe, once per region.
#[derive(Debug, Clone)]
pub struct GridAutoMock {
    settings: GridAutoSettings,
    seed: u64,
}

impl GridAutoMock {
    pub fn new(settings: GridAutoSettings, seed: u64) -> Self {
        GridAutoMock { settings, seed }
    }
}

impl Segmenter for GridAutoMock {
    fn segment_raw(&self, _image: &ImagePayload, _boxes: &[RawBox]) -> Result<Vec<RawCandidate>, BackendError> {
        Err(unsupported("grid-auto (box prompts)"))
    }

    fn segment_auto_raw(&self, image: &ImagePayload) -> Result<Vec<RawCandidate>, BackendError> {
        let cell = self.settings.cell.max(1);
        let mut rng = stream_rng(self.seed, image.source_id(), "auto");
        let ox = rng.random_range(0..cell);
        let oy = rng.random_range(0..cell);
        let components = connected_components(&image.threshold(self.settings.tau));
        let width = image.width() as usize;
        let mut label = vec![usize::MAX; image.width() as usize * image.height() as usize];
        for (k, comp) in components.iter().enumerate() {
            for (x, y) in comp.foreground_pixels() {
                label[y as usize * width + x as usize] = k;
            }
        }
        let mut emitted = vec![false; components.len()];
        let mut out = Vec::new();
        for y in (oy..image.height()).step_by(cell as usize) {
            for x in (ox..image.width()).step_by(cell as usize) {
                let k = label[y as usize * width + x as usize];
                if k == usize::MAX || emitted[k] {
                    continue;
                }
                emitted[k] = true;
                out.push(RawCandidate {
                    mask: components[k].clone(),
                    quality: rng.random_range(0.5..1.0),
                    source_index: None,
                });
            }
        }
        Ok(out)
    }
}
