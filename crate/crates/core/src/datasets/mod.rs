//! Manifests, image/mask loading and synthetic benchmark generation.

mod manifest;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::{BackendError, GroundTruthStore, ImagePayload};
use crate::geom::BinaryMask;

pub use manifest::{load_manifest, Manifest, Sample};
pub use synth::{generate_synthetic, render_shapes, Shape, SynthSpec};

/// Modalities a sample may declare, in canonical spelling.
pub const MODALITIES: [&str; 8] = [
    "Endoscopy",
    "Dermoscopy",
    "Microscopy",
    "Ultrasound",
    "X-ray",
    "CT",
    "T1 MRI",
    "T2 MRI",
];

/// GT pixels at or above this value are foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// Canonical spelling of a modality name, matched case-insensitively.
pub fn canonical_modality(name: &str) -> Option<&'static str> {
    let name = name.trim();
    MODALITIES.iter().copied().find(|m| m.eq_ignore_ascii_case(name))
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("duplicate sample ids: {}", .0.join(", "))]
    Duplicate(Vec<String>),
    #[error("missing files:\n  {}", .0.join("\n  "))]
    MissingFiles(Vec<String>),
    #[error("manifest declares {declared} samples but lists {actual}")]
    CountMismatch { declared: usize, actual: usize },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("sample {sample_id}: mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        sample_id: String,
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("{0}")]
    Precondition(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

fn decode(path: &Path) -> Result<image::DynamicImage, DatasetError> {
    image::open(path).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads and binarizes a ground-truth mask.
pub fn load_mask(path: &Path) -> Result<BinaryMask, DatasetError> {
    let gray = decode(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    let bits: Vec<bool> = gray.as_raw().iter().map(|&v| v >= MASK_THRESHOLD).collect();
    BinaryMask::from_bools(w, h, &bits).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Decodes the image (gray stays gray, anything with color becomes RGB) and
/// its mask, if any. The payload's source id is [`Sample::source_id`].
pub fn load_sample(s: &Sample) -> Result<(ImagePayload, Option<BinaryMask>), DatasetError> {
    let img = decode(&s.image_path)?;
    let (w, h, channels, pixels) = if img.color().has_color() {
        let rgb = img.to_rgb8();
        (rgb.width(), rgb.height(), 3, rgb.into_raw())
    } else {
        let gray = img.to_luma8();
        (gray.width(), gray.height(), 1, gray.into_raw())
    };
    let payload =
        ImagePayload::new(w, h, channels, pixels, s.source_id()).map_err(|e: BackendError| DatasetError::Decode {
            path: s.image_path.clone(),
            message: e.to_string(),
        })?;
    let mask = match &s.gt_mask_path {
        Some(p) => {
            let m = load_mask(p)?;
            if m.width() != w || m.height() != h {
                return Err(DatasetError::DimensionMismatch {
                    sample_id: s.sample_id.clone(),
                    image_w: w,
                    image_h: h,
                    mask_w: m.width(),
                    mask_h: m.height(),
                });
            }
            Some(m)
        }
        None => None,
    };
    Ok((payload, mask))
}

/// Masks for every sample that has a readable one, for the oracle mocks.
/// Unreadable masks are returned separately rather than failing the store.
pub fn ground_truth_store(manifest: &Manifest) -> (GroundTruthStore, Vec<(String, DatasetError)>) {
    let mut store = GroundTruthStore::new();
    let mut failed = Vec::new();
    for s in &manifest.samples {
        match &s.gt_mask_path {
            Some(p) => match load_mask(p) {
                Ok(m) => store.insert(s.source_id(), s.concept.clone(), Some(m)),
                Err(e) => failed.push((s.sample_id.clone(), e)),
            },
            None => store.insert(s.source_id(), s.concept.clone(), None),
        }
    }
    (store, failed)
}
