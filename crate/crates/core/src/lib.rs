//! Zero-shot segmentation pipeline orchestration and evaluation.
//!
//! A sample flows through three pluggable model backends: a chat model that
//! describes the target concept, a grounding detector that turns the
//! description into scored boxes, and a promptable segmenter that decodes
//! masks from those boxes. The crate wires the stages together, runs the
//! comparison methods over a dataset manifest and computes Dice statistics.

pub mod backends;
pub mod config;
pub mod datasets;
pub mod evalstats;
pub mod geom;
pub mod grounding;
pub mod methods;
pub mod pipeline;
pub mod prompting;
pub mod segmenting;
