//! Stage 2: text prompt to box prompts.
//!
//! Detector output goes through NMS first and the confidence threshold
//! second; the surviving boxes keep [`BoxSet`] rank order and TOP-k selection
//! takes a prefix of it.

use serde::{Deserialize, Serialize};

use crate::backends::{detect, BackendError, DetectorBackend, ImagePayload};
use crate::geom::{nms, BoxSet};
use crate::prompting::DescriptivePrompt;

fn default_nms() -> f64 {
    0.5
}
fn default_confidence() -> f64 {
    0.5
}
fn default_top_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingConfig {
    #[serde(default = "default_nms")]
    pub nms_iou_threshold: f64,
    #[serde(default = "default_confidence")]
    pub confidence_threshold: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            nms_iou_threshold: default_nms(),
            confidence_threshold: default_confidence(),
            top_k: default_top_k(),
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.nms_iou_threshold) {
            return Err(format!("nms_iou_threshold {} outside [0, 1]", self.nms_iou_threshold));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            ));
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        Ok(())
    }
}

/// NMS followed by dropping boxes scored below the confidence threshold.
pub fn filter_boxes(raw: &BoxSet, cfg: &GroundingConfig) -> BoxSet {
    let mut kept = nms(raw, cfg.nms_iou_threshold);
    kept.retain(|b| b.score() >= cfg.confidence_threshold);
    kept
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grounding {
    /// Filtered boxes in rank order; empty means a grounding miss.
    pub boxes: BoxSet,
    /// Boxes returned by the detector before filtering.
    pub raw_count: usize,
    /// Boxes discarded because clipping left no area.
    pub clipped_away: usize,
}

/// Detects boxes for the prompt and filters them. An empty result is a
/// grounding miss, not an error.
pub fn ground_concept(
    image: &ImagePayload,
    prompt: &DescriptivePrompt,
    backend: &DetectorBackend,
    cfg: &GroundingConfig,
) -> Result<Grounding, BackendError> {
    cfg.validate().map_err(BackendError::Precondition)?;
    let detection = detect(backend, image, &prompt.text)?;
    Ok(Grounding {
        boxes: filter_boxes(&detection.boxes, cfg),
        raw_count: detection.boxes.len(),
        clipped_away: detection.dropped,
    })
}

/// The first `min(k, |boxes|)` boxes in rank order.
pub fn select_top_k(boxes: &BoxSet, k: usize) -> BoxSet {
    assert!(k >= 1, "top_k must be at least 1");
    boxes.prefix(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{iou, ScoredBox};
    use proptest::prelude::*;

    fn b(x0: u32, y0: u32, x1: u32, y1: u32, s: f64) -> ScoredBox {
        ScoredBox::new(x0, y0, x1, y1, s).unwrap()
    }

    #[test]
    fn coincident_candidates_collapse() {
        let raw: BoxSet = [b(0, 0, 10, 10, 0.9), b(0, 0, 10, 10, 0.8)].into_iter().collect();
        let out = filter_boxes(&raw, &GroundingConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out.get(0).unwrap().score(), 0.9);
    }

    #[test]
    fn confidence_filter() {
        let raw: BoxSet = [b(0, 0, 10, 10, 0.9), b(20, 20, 30, 30, 0.4)].into_iter().collect();
        let out = filter_boxes(&raw, &GroundingConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out.get(0).unwrap().score(), 0.9);
    }

    #[test]
    fn suppressor_above_threshold_survives() {
        let raw: BoxSet = [b(0, 0, 10, 10, 0.3), b(1, 0, 11, 10, 0.6)].into_iter().collect();
        let out = filter_boxes(&raw, &GroundingConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out.get(0).unwrap().score(), 0.6);
    }

    #[test]
    fn top_k_cases() {
        let set: BoxSet = [b(0, 0, 1, 1, 0.9), b(5, 5, 6, 6, 0.8), b(9, 9, 10, 10, 0.7)]
            .into_iter()
            .collect();
        assert_eq!(select_top_k(&set, 10).len(), 3);
        let two = select_top_k(&set, 2);
        let scores: Vec<f64> = two.iter().map(|x| x.score()).collect();
        assert_eq!(scores, vec![0.9, 0.8]);
        let tie: BoxSet = [b(0, 0, 5, 10, 0.8), b(0, 0, 10, 10, 0.8)].into_iter().collect();
        assert_eq!(select_top_k(&tie, 1).get(0).unwrap().area(), 100);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(GroundingConfig {
            top_k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GroundingConfig {
            nms_iou_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GroundingConfig {
            confidence_threshold: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn arb_set() -> impl Strategy<Value = BoxSet> {
        proptest::collection::vec((0u32..20, 0u32..20, 1u32..12, 1u32..12, 0u32..=10), 0..10).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| b(x, y, x + w, y + h, f64::from(s) / 10.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn top_k_prefix_property(set in arb_set(), k1 in 1usize..12, extra in 0usize..5) {
            let small = select_top_k(&set, k1);
            let large = select_top_k(&set, k1 + extra);
            prop_assert_eq!(small.as_slice(), &large.as_slice()[..small.len()]);
        }

        #[test]
        fn filtered_boxes_respect_thresholds(set in arb_set(), t in 0u32..=10, c in 0u32..=10) {
            let cfg = GroundingConfig {
                nms_iou_threshold: f64::from(t) / 10.0,
                confidence_threshold: f64::from(c) / 10.0,
                top_k: 10,
            };
            let out = filter_boxes(&set, &cfg);
            prop_assert!(out.iter().all(|x| x.score() >= cfg.confidence_threshold));
            let kept = nms(&set, cfg.nms_iou_threshold);
            for cand in set.iter() {
                if !kept.iter().any(|k| k == cand) {
                    prop_assert!(kept.iter().any(|k| iou(k, cand) > cfg.nms_iou_threshold));
                }
            }
        }

        #[test]
        fn threshold_commutes_with_nms(set in arb_set(), t in 0u32..=10, c in 0u32..=10) {
            // a suppressor never scores below what it suppresses
            let cfg = GroundingConfig {
                nms_iou_threshold: f64::from(t) / 10.0,
                confidence_threshold: f64::from(c) / 10.0,
                top_k: 10,
            };
            let mut pre = set.clone();
            pre.retain(|x| x.score() >= cfg.confidence_threshold);
            prop_assert_eq!(filter_boxes(&set, &cfg), nms(&pre, cfg.nms_iou_threshold));
        }

        #[test]
        fn raising_confidence_never_adds(set in arb_set(), c in 0u32..10, d in 1u32..=5) {
            let lo = GroundingConfig { confidence_threshold: f64::from(c) / 10.0, ..Default::default() };
            let hi = GroundingConfig { confidence_threshold: (f64::from(c + d) / 10.0).min(1.0), ..Default::default() };
            let a = filter_boxes(&set, &lo);
            let b = filter_boxes(&set, &hi);
            prop_assert!(b.iter().all(|x| a.iter().any(|y| y == x)));
        }
    }
}
