//! Geometry and mask kernels.
//!
//! Everything in here is pure: boxes, binary masks, overlap measures, greedy
//! non-maximum suppression, connected components and the canonical run-length
//! codec used on the wire. Pixel coordinates are half-open throughout, so a
//! box `(x_min, y_min, x_max, y_max)` covers `(x_max - x_min) * (y_max - y_min)`
//! pixels and a single pixel at column 3, row 7 is the box `(3, 7, 4, 8)`.

mod boxes;
mod components;
mod mask;
mod nms;
mod rle;

pub use boxes::{iou, BoxSet, ScoredBox};
pub use components::{connected_components, mask_to_bbox, BoxMode};
pub use mask::{dice, BinaryMask};
pub use nms::nms;
pub use rle::{rle_decode, rle_encode, RleMask};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate box ({x_min}, {y_min}, {x_max}, {y_max}): min must be strictly below max")]
    DegenerateBox {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
    },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("mask must be at least 1x1, got {0}x{1}")]
    EmptyShape(u32, u32),
    #[error("bitmap length {actual} does not match {width}x{height}")]
    BitmapLength { width: u32, height: u32, actual: usize },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("run lengths sum to {sum}, expected {expected}")]
    RunSum { sum: u64, expected: u64 },
    #[error("zero-length run at position {0}")]
    ZeroRun(usize),
}
