use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{canonical_modality, DatasetError};
use crate::backends::mocks::ScriptEntry;
use crate::backends::rng::stream_rng;
use crate::geom::BinaryMask;

const FOREGROUND: u8 = 230;
const BACKGROUND: u8 = 20;
/// Largest noise amplitude that keeps foreground >= 200 and background <= 50.
pub const MAX_NOISE: u8 = 30;
const MIN_SIDE: u32 = 6;

/// A filled shape in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Pixels whose center distance to `(cx, cy)` is at most `r`.
    Disk { cx: u32, cy: u32, r: u32 },
    /// Half-open rectangle.
    Rect { x0: u32, y0: u32, x1: u32, y1: u32 },
}

impl Shape {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => {
                let (dx, dy) = (i64::from(x) - i64::from(cx), i64::from(y) - i64::from(cy));
                dx * dx + dy * dy <= i64::from(r) * i64::from(r)
            }
            Shape::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&x) && (y0..y1).contains(&y),
        }
    }
}

fn default_n() -> usize {
    50
}
fn default_side() -> u32 {
    64
}
fn default_shapes() -> u32 {
    1
}
fn default_noise() -> u8 {
    10
}
fn default_concept() -> String {
    "cell".into()
}
fn default_modality() -> String {
    "Microscopy".into()
}
fn default_dataset() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
    /// Random shapes per image.
    #[serde(default = "default_shapes")]
    pub shapes: u32,
    /// Uniform noise amplitude, at most [`MAX_NOISE`].
    #[serde(default = "default_noise")]
    pub noise: u8,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concept")]
    pub concept: String,
    #[serde(default = "default_modality")]
    pub modality: String,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// When non-empty, every image uses these shapes instead of random ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_shapes: Vec<Shape>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: default_n(),
            width: default_side(),
            height: default_side(),
            shapes: default_shapes(),
            noise: default_noise(),
            seed: 0,
            concept: default_concept(),
            modality: default_modality(),
            dataset: default_dataset(),
            fixed_shapes: Vec::new(),
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Precondition(m));
        if self.n == 0 {
            return bad("synthetic dataset needs n >= 1".into());
        }
        if self.width < 2 * MIN_SIDE + 4 || self.height < 2 * MIN_SIDE + 4 {
            return bad(format!("images must be at least {0}x{0}", 2 * MIN_SIDE + 4));
        }
        if self.noise > MAX_NOISE {
            return bad(format!("noise {} exceeds {MAX_NOISE}", self.noise));
        }
        if self.fixed_shapes.is_empty() && self.shapes == 0 {
            return bad("shapes must be at least 1".into());
        }
        if canonical_modality(&self.modality).is_none() {
            return bad(format!("unknown modality '{}'", self.modality));
        }
        if self.concept.trim().is_empty() || self.dataset.trim().is_empty() {
            return bad("concept and dataset must be non-empty".into());
        }
        Ok(())
    }
}

fn random_shape(rng: &mut impl Rng, w: u32, h: u32) -> Shape {
    if rng.random_bool(0.5) {
        let r = rng.random_range(MIN_SIDE..=(w.min(h) / 4).max(MIN_SIDE));
        Shape::Disk {
            cx: rng.random_range(r..w - r),
            cy: rng.random_range(r..h - r),
            r,
        }
    } else {
        let sw = rng.random_range(MIN_SIDE..=(w / 2).max(MIN_SIDE));
        let sh = rng.random_range(MIN_SIDE..=(h / 2).max(MIN_SIDE));
        let x0 = rng.random_range(0..=w - sw);
        let y0 = rng.random_range(0..=h - sh);
        Shape::Rect {
            x0,
            y0,
            x1: x0 + sw,
            y1: y0 + sh,
        }
    }
}

/// Gray pixels and the exact mask for `shapes`. Noise is uniform in
/// `[-noise, noise]` and never crosses the 128 margin.
pub fn render_shapes(
    width: u32,
    height: u32,
    shapes: &[Shape],
    noise: u8,
    rng: &mut impl Rng,
) -> (Vec<u8>, BinaryMask) {
    let noise = i16::from(noise.min(MAX_NOISE));
    let mask = BinaryMask::from_fn(width, height, |x, y| shapes.iter().any(|s| s.contains(x, y)))
        .expect("validated dimensions");
    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for i in 0..mask.len() {
        let base = if mask.get_index(i) { FOREGROUND } else { BACKGROUND };
        let delta = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
        pixels.push((i16::from(base) + delta).clamp(0, 255) as u8);
    }
    (pixels, mask)
}

fn describe(shapes: &[Shape], mask: &BinaryMask) -> String {
    let shape = match shapes {
        [Shape::Disk { .. }] => "round",
        [Shape::Rect { .. }] => "rectangular",
        _ => "irregular",
    };
    let n = mask.foreground_count().max(1) as f64;
    let (sx, sy) = mask
        .foreground_pixels()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + f64::from(x), b + f64::from(y)));
    let third = |v: f64, len: u32| ((3.0 * v / f64::from(len)) as usize).min(2);
    let row = ["upper", "middle", "lower"][third(sy / n, mask.height())];
    let col = ["left", "center", "right"][third(sx / n, mask.width())];
    let location = match (row, col) {
        ("middle", "center") => "center of the image".to_string(),
        ("middle", c) => format!("{c} side of the image"),
        (r, c) => format!("{r} {c} of the image"),
    };
    format!("color: bright white\nshape: {shape}\nlocation: {location}")
}

fn write_png(path: &Path, width: u32, height: u32, pixels: Vec<u8>) -> Result<(), DatasetError> {
    let img = image::GrayImage::from_raw(width, height, pixels).expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::io(path, e))
}

/// Writes `images/`, `masks/`, `manifest.csv` and `chat_script.json` under
/// `dir` and returns the manifest path. Output depends only on `spec`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<PathBuf, DatasetError> {
    spec.validate()?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| DatasetError::io(&p, e))?;
    }
    let width = (spec.n - 1).to_string().len().max(4);
    let mut rows = Vec::with_capacity(spec.n);
    let mut script = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let id = format!("syn-{i:0width$}");
        let mut rng = stream_rng(spec.seed, &id, "synthetic");
        let shapes: Vec<Shape> = if spec.fixed_shapes.is_empty() {
            (0..spec.shapes)
                .map(|_| random_shape(&mut rng, spec.width, spec.height))
                .collect()
        } else {
            spec.fixed_shapes.clone()
        };
        let (pixels, mask) = render_shapes(spec.width, spec.height, &shapes, spec.noise, &mut rng);
        let mask_pixels = mask.to_bools().into_iter().map(|b| if b { 255 } else { 0 }).collect();
        write_png(&dir.join(format!("images/{id}.png")), spec.width, spec.height, pixels)?;
        write_png(
            &dir.join(format!("masks/{id}.png")),
            spec.width,
            spec.height,
            mask_pixels,
        )?;
        script.push(ScriptEntry {
            source_id: format!("{}/{id}", spec.dataset),
            dialog_sha256: None,
            reply: describe(&shapes, &mask),
        });
        rows.push(id);
    }

    let manifest = dir.join("manifest.csv");
    let mut out = format!("# dataset={}\n# declared_count={}\n", spec.dataset, spec.n).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let io = |e: csv::Error| DatasetError::io(&manifest, e);
        w.write_record(["sample_id", "image", "mask", "modality", "concept"])
            .map_err(io)?;
        for id in &rows {
            w.write_record([
                id.as_str(),
                &format!("images/{id}.png"),
                &format!("masks/{id}.png"),
                &spec.modality,
                &spec.concept,
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| DatasetError::io(&manifest, e))?;
    }
    std::fs::write(&manifest, out).map_err(|e| DatasetError::io(&manifest, e))?;

    let script_path = dir.join("chat_script.json");
    let json = serde_json::to_string_pretty(&script).expect("script entries serialize");
    std::fs::write(&script_path, json + "\n").map_err(|e| DatasetError::io(&script_path, e))?;
    Ok(manifest)
}
