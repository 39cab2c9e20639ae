use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::GeomError;

/// Axis-aligned box in half-open pixel coordinates with a confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phrase: Option<String>,
}

impl ScoredBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32, score: f64) -> Result<Self, GeomError> {
        if x_min >= x_max || y_min >= y_max {
            return Err(GeomError::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeomError::ScoreOutOfRange(score));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            score,
            phrase: None,
        })
    }

    pub fn with_phrase(mut self, phrase: impl Into<String>) -> Self {
        self.phrase = Some(phrase.into());
        self
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }
    pub fn y_min(&self) -> u32 {
        self.y_min
    }
    pub fn x_max(&self) -> u32 {
        self.x_max
    }
    pub fn y_max(&self) -> u32 {
        self.y_max
    }
    pub fn score(&self) -> f64 {
        self.score
    }
    pub fn phrase(&self) -> Option<&str> {
        self.phrase.as_deref()
    }

    pub fn coords(&self) -> (u32, u32, u32, u32) {
        (self.x_min, self.y_min, self.x_max, self.y_max)
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn intersection_area(&self, other: &ScoredBox) -> u64 {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        if x0 >= x1 || y0 >= y1 {
            0
        } else {
            u64::from(x1 - x0) * u64::from(y1 - y0)
        }
    }

    /// Rank order used by [`BoxSet`]: score descending, then area descending.
    /// Insertion order breaks the remaining ties.
    fn rank_cmp(&self, other: &ScoredBox) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| other.area().cmp(&self.area()))
    }

    fn bitwise_eq(&self, other: &ScoredBox) -> bool {
        self.coords() == other.coords() && self.score.to_bits() == other.score.to_bits() && self.phrase == other.phrase
    }
}

/// Intersection over union of two boxes, exact integer areas with one
/// final division.
pub fn iou(a: &ScoredBox, b: &ScoredBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Ranked collection of boxes.
///
/// Kept sorted by score descending, area descending, then insertion order.
/// Inserting a box bitwise-identical to one already present is a no-op.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    boxes: Vec<ScoredBox>,
}

impl BoxSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, b: ScoredBox) -> bool {
        if self.boxes.iter().any(|e| e.bitwise_eq(&b)) {
            return false;
        }
        // First position ranked strictly after `b`; equal-ranked entries
        // were inserted earlier and stay ahead.
        let pos = self.boxes.partition_point(|e| e.rank_cmp(&b) != Ordering::Greater);
        self.boxes.insert(pos, b);
        true
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScoredBox> {
        self.boxes.iter()
    }

    pub fn as_slice(&self) -> &[ScoredBox] {
        &self.boxes
    }

    pub fn get(&self, i: usize) -> Option<&ScoredBox> {
        self.boxes.get(i)
    }

    /// The first `k` entries in rank order.
    pub fn prefix(&self, k: usize) -> BoxSet {
        BoxSet {
            boxes: self.boxes.iter().take(k).cloned().collect(),
        }
    }

    /// Keeps entries for which `keep` returns true, preserving order.
    pub fn retain(&mut self, keep: impl FnMut(&ScoredBox) -> bool) {
        self.boxes.retain(keep);
    }

    pub fn into_vec(self) -> Vec<ScoredBox> {
        self.boxes
    }
}

impl FromIterator<ScoredBox> for BoxSet {
    fn from_iter<I: IntoIterator<Item = ScoredBox>>(iter: I) -> Self {
        let mut set = BoxSet::new();
        for b in iter {
            set.insert(b);
        }
        set
    }
}

impl<'a> IntoIterator for &'a BoxSet {
    type Item = &'a ScoredBox;
    type IntoIter = std::slice::Iter<'a, ScoredBox>;

    fn into_iter(self) -> Self::IntoIter {
        self.boxes.iter()
    }
}
