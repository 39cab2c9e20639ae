use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::geom::{BinaryMask, ScoredBox};

/// Raw 8-bit image handed to a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
    source_id: String,
}

impl ImagePayload {
    pub fn new(
        width: u32,
        height: u32,
        channels: u8,
        pixels: Vec<u8>,
        source_id: impl Into<String>,
    ) -> Result<Self, BackendError> {
        if width == 0 || height == 0 {
            return Err(BackendError::Precondition(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(BackendError::Precondition(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(BackendError::Precondition(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Grey level at `(x, y)`; RGB pixels use the integer channel mean.
    pub fn intensity(&self, x: u32, y: u32) -> u8 {
        let i = (y as usize * self.width as usize + x as usize) * self.channels as usize;
        if self.channels == 1 {
            self.pixels[i]
        } else {
            let sum: u32 = self.pixels[i..i + 3].iter().map(|&v| u32::from(v)).sum();
            (sum / 3) as u8
        }
    }

    pub fn threshold(&self, tau: u8) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.intensity(x, y) >= tau)
            .expect("image dimensions are non-zero")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

/// A box as reported by a detector, before clipping to the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: f64,
}

impl RawBox {
    /// Rounds outward to whole pixels and clips to `width x height`.
    /// `Ok(None)` means the box lost all area after clipping.
    pub fn clip(&self, width: u32, height: u32) -> Result<Option<ScoredBox>, BackendError> {
        let coords = [self.x0, self.y0, self.x1, self.y1];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(BackendError::Malformed(format!(
                "non-finite box coordinate in {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(BackendError::Malformed(format!(
                "box score {} outside [0, 1]",
                self.score
            )));
        }
        let clamp = |v: f64, hi: u32| v.clamp(0.0, f64::from(hi)) as u32;
        let x0 = clamp(self.x0.floor(), width);
        let y0 = clamp(self.y0.floor(), height);
        let x1 = clamp(self.x1.ceil(), width);
        let y1 = clamp(self.y1.ceil(), height);
        if x0 >= x1 || y0 >= y1 {
            return Ok(None);
        }
        Ok(Some(ScoredBox::new(x0, y0, x1, y1, self.score)?))
    }
}

impl From<&ScoredBox> for RawBox {
    fn from(b: &ScoredBox) -> Self {
        RawBox {
            x0: f64::from(b.x_min()),
            y0: f64::from(b.y_min()),
            x1: f64::from(b.x_max()),
            y1: f64::from(b.y_max()),
            score: b.score(),
        }
    }
}

/// A candidate mask as produced by a segmenter, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCandidate {
    pub mask: BinaryMask,
    pub quality: f64,
    pub source_index: Option<usize>,
}

/// A validated segmenter output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMaskCandidate {
    pub mask: BinaryMask,
    pub predicted_quality: f64,
    /// Index of the prompting box within the request's box list.
    pub source_index: Option<usize>,
    pub source_box: Option<ScoredBox>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_length_checked() {
        assert!(ImagePayload::new(2, 2, 3, vec![0; 12], "a").is_ok());
        assert!(ImagePayload::new(2, 2, 3, vec![0; 4], "a").is_err());
        assert!(ImagePayload::new(2, 2, 2, vec![0; 8], "a").is_err());
    }

    #[test]
    fn rgb_intensity_is_channel_mean() {
        let img = ImagePayload::new(1, 1, 3, vec![30, 60, 91], "a").unwrap();
        assert_eq!(img.intensity(0, 0), 60);
    }

    #[test]
    fn clip_rounds_outward_and_drops_degenerate() {
        let b = RawBox {
            x0: -3.2,
            y0: 1.5,
            x1: 4.1,
            y1: 99.0,
            score: 0.5,
        };
        assert_eq!(b.clip(10, 10).unwrap().unwrap().coords(), (0, 1, 5, 10));
        let outside = RawBox {
            x0: 12.0,
            y0: 0.0,
            x1: 15.0,
            y1: 3.0,
            score: 0.5,
        };
        assert_eq!(outside.clip(10, 10).unwrap(), None);
        let bad = RawBox {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
            score: 1.2,
        };
        assert!(bad.clip(10, 10).is_err());
    }
}
