use super::boxes::{iou, BoxSet};

/// Greedy non-maximum suppression.
///
/// Walks the set in rank order, keeping a box unless its IoU with an already
/// kept box is strictly greater than `iou_threshold`.
pub fn nms(candidates: &BoxSet, iou_threshold: f64) -> BoxSet {
    let boxes = candidates.as_slice();
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = BoxSet::new();
    for (i, current) in boxes.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        for (j, other) in boxes.iter().enumerate().skip(i + 1) {
            if !suppressed[j] && iou(current, other) > iou_threshold {
                suppressed[j] = true;
            }
        }
        kept.insert(current.clone());
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ScoredBox;

    fn b(x0: u32, y0: u32, x1: u32, y1: u32, s: f64) -> ScoredBox {
        ScoredBox::new(x0, y0, x1, y1, s).unwrap()
    }

    #[test]
    fn empty_in_empty_out() {
        assert!(nms(&BoxSet::new(), 0.5).is_empty());
    }

    #[test]
    fn coincident_keeps_higher_score() {
        let set: BoxSet = [b(0, 0, 10, 10, 0.8), b(0, 0, 10, 10, 0.9)].into_iter().collect();
        let out = nms(&set, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out.get(0).unwrap().score(), 0.9);
    }

    #[test]
    fn threshold_one_only_drops_coincident() {
        let set: BoxSet = [b(0, 0, 10, 10, 0.9), b(0, 0, 10, 10, 0.7), b(1, 0, 10, 10, 0.8)]
            .into_iter()
            .collect();
        // iou == 1.0 is not > 1.0, so nothing is suppressed at threshold 1
        assert_eq!(nms(&set, 1.0).len(), 3);
    }

    #[test]
    fn threshold_zero_keeps_disjoint_only() {
        let set: BoxSet = [b(0, 0, 10, 10, 0.9), b(9, 9, 12, 12, 0.8), b(10, 0, 20, 10, 0.7)]
            .into_iter()
            .collect();
        let out = nms(&set, 0.0);
        let scores: Vec<f64> = out.iter().map(|x| x.score()).collect();
        assert_eq!(scores, vec![0.9, 0.7]);
    }

    #[test]
    fn chain_suppression_is_greedy() {
        // A suppresses B; B would have suppressed C, but B is gone so C stays.
        let set: BoxSet = [b(0, 0, 10, 10, 0.9), b(4, 0, 14, 10, 0.8), b(8, 0, 18, 10, 0.7)]
            .into_iter()
            .collect();
        let out = nms(&set, 0.3);
        let scores: Vec<f64> = out.iter().map(|x| x.score()).collect();
        assert_eq!(scores, vec![0.9, 0.7]);
    }
}
