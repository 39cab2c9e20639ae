use serde::{Deserialize, Serialize};

use super::{BinaryMask, GeomError};

/// Run-length encoded mask.
///
/// Runs alternate background/foreground in row-major order, starting with a
/// background run that is zero when the first pixel is foreground. All other
/// runs are positive, which makes the encoding unique per mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u64>,
}

impl RleMask {
    pub fn validate(&self) -> Result<(), GeomError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeomError::EmptyShape(self.width, self.height));
        }
        if let Some(pos) = self.runs.iter().skip(1).position(|&r| r == 0) {
            return Err(GeomError::ZeroRun(pos + 1));
        }
        let expected = u64::from(self.width) * u64::from(self.height);
        let sum = self
            .runs
            .iter()
            .try_fold(0u64, |acc, &r| acc.checked_add(r))
            .unwrap_or(u64::MAX);
        if sum != expected {
            return Err(GeomError::RunSum { sum, expected });
        }
        Ok(())
    }
}

pub fn rle_encode(m: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u64;
    for i in 0..m.len() {
        let bit = m.get_index(i);
        if bit != current {
            runs.push(count);
            count = 0;
            current = bit;
        }
        count += 1;
    }
    runs.push(count);
    RleMask {
        width: m.width(),
        height: m.height(),
        runs,
    }
}

pub fn rle_decode(r: &RleMask) -> Result<BinaryMask, GeomError> {
    r.validate()?;
    let mut m = BinaryMask::new(r.width, r.height)?;
    let mut idx = 0usize;
    for (k, &run) in r.runs.iter().enumerate() {
        let run = run as usize;
        if k % 2 == 1 {
            for i in idx..idx + run {
                m.set_index(i, true);
            }
        }
        idx += run;
    }
    Ok(m)
}
