//! Stage 3: box-prompted mask decoding and candidate selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{segment_with_boxes, BackendError, ImagePayload, ScoredMaskCandidate, SegmenterBackend};
use crate::geom::{dice, BinaryMask, BoxSet, GeomError};

/// How one mask is picked from the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Highest Dice against the ground truth. Evaluation only.
    #[default]
    OracleDice,
    /// Highest segmenter-reported quality; needs no ground truth.
    PredictedQuality,
}

impl SelectionPolicy {
    pub fn requires_gt(self) -> bool {
        matches!(self, SelectionPolicy::OracleDice)
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionPolicy::OracleDice => "oracle_dice",
            SelectionPolicy::PredictedQuality => "predicted_quality",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("no candidates to select from")]
    Empty,
    #[error("oracle selection needs a ground-truth mask")]
    MissingGroundTruth,
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// All candidates for the boxes, at least one per box, each tagged with its
/// prompting box.
pub fn segment_candidates(
    image: &ImagePayload,
    boxes: &BoxSet,
    backend: &SegmenterBackend,
) -> Result<Vec<ScoredMaskCandidate>, BackendError> {
    segment_with_boxes(backend, image, boxes)
}

/// Index of the chosen candidate.
///
/// Oracle: max Dice, then max predicted quality, then lowest index.
/// Predicted quality: max quality, then lowest index. The ground truth is
/// ignored by the predicted-quality policy.
pub fn select_mask(
    candidates: &[ScoredMaskCandidate],
    policy: SelectionPolicy,
    gt: Option<&BinaryMask>,
) -> Result<usize, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::Empty);
    }
    match policy {
        SelectionPolicy::OracleDice => {
            let gt = gt.ok_or(SelectionError::MissingGroundTruth)?;
            let mut best = 0;
            let mut best_key = (dice(&candidates[0].mask, gt)?, candidates[0].predicted_quality);
            for (i, c) in candidates.iter().enumerate().skip(1) {
                let key = (dice(&c.mask, gt)?, c.predicted_quality);
                if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1) {
                    best = i;
                    best_key = key;
                }
            }
            Ok(best)
        }
        SelectionPolicy::PredictedQuality => {
            let mut best = 0;
            for (i, c) in candidates.iter().enumerate().skip(1) {
                if c.predicted_quality > candidates[best].predicted_quality {
                    best = i;
                }
            }
            Ok(best)
        }
    }
}

/// Candidates prompted by one of the first `k` ranked boxes.
pub fn restrict_to_top_k(candidates: &[ScoredMaskCandidate], k: usize) -> Vec<ScoredMaskCandidate> {
    candidates
        .iter()
        .filter(|c| c.source_index.is_some_and(|i| i < k))
        .cloned()
        .collect()
}
