use serde::{Deserialize, Serialize};

use super::GeomError;

/// Row-major binary foreground bitmap.
///
/// Bits are packed 64 to a word; pixel `(x, y)` lives at linear index
/// `y * width + x`. Padding bits past `width * height` are always zero so
/// popcounts over whole words are exact.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("foreground", &self.foreground_count())
            .finish()
    }
}

fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(width: u32, height: u32) -> Result<Self, GeomError> {
        if width == 0 || height == 0 {
            return Err(GeomError::EmptyShape(width, height));
        }
        let len = width as usize * height as usize;
        Ok(Self {
            width,
            height,
            words: vec![0; word_count(len)],
        })
    }

    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self, GeomError> {
        let mut mask = Self::new(width, height)?;
        if bits.len() != mask.len() {
            return Err(GeomError::BitmapLength {
                width,
                height,
                actual: bits.len(),
            });
        }
        for (i, &b) in bits.iter().enumerate() {
            if b {
                mask.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(mask)
    }

    /// Builds a mask by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self, GeomError> {
        let mut mask = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of pixels, `width * height`.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.foreground_count() == 0
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<(), GeomError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(GeomError::ShapeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ))
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.get_index(y as usize * self.width as usize + x as usize)
    }

    pub fn get_index(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.set_index(y as usize * self.width as usize + x as usize, value);
    }

    pub(crate) fn set_index(&mut self, i: usize, value: bool) {
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn foreground_count(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<u64, GeomError> {
        self.check_shape(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum())
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, GeomError> {
        self.check_shape(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, GeomError> {
        self.check_shape(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        })
    }

    /// Keeps only the pixels inside the half-open rectangle.
    pub fn crop_to(&self, x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> BinaryMask {
        let x_max = x_max.min(self.width);
        let y_max = y_max.min(self.height);
        let mut out = BinaryMask {
            width: self.width,
            height: self.height,
            words: vec![0; self.words.len()],
        };
        for y in y_min..y_max {
            for x in x_min..x_max {
                if self.get(x, y) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    /// Iterator over `(x, y)` of foreground pixels in row-major order.
    pub fn foreground_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        (0..self.len())
            .filter(move |&i| self.get_index(i))
            .map(move |i| ((i % w) as u32, (i / w) as u32))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get_index(i)).collect()
    }
}

/// Dice overlap `2|m ∩ gt| / (|m| + |gt|)`.
///
/// Two empty masks score 1.0; an empty prediction against a non-empty
/// ground truth scores 0.0.
pub fn dice(m: &BinaryMask, gt: &BinaryMask) -> Result<f64, GeomError> {
    let inter = m.intersection_count(gt)?;
    let total = m.foreground_count() + gt.foreground_count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok((2 * inter) as f64 / total as f64)
}
