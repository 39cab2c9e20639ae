use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, BoxSet, GeomError, ScoredBox};

/// How gold-standard boxes are derived from a ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxMode {
    /// One tight box over all foreground.
    #[default]
    Union,
    /// One tight box per 8-connected component.
    PerComponent,
}

fn tight_box(m: &BinaryMask) -> Option<ScoredBox> {
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for (x, y) in m.foreground_pixels() {
        bounds = Some(match bounds {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    bounds.map(|(x0, y0, x1, y1)| ScoredBox::new(x0, y0, x1 + 1, y1 + 1, 1.0).expect("tight box is non-degenerate"))
}

/// Tight box(es) around the foreground, each with score 1.0.
pub fn mask_to_bbox(m: &BinaryMask, mode: BoxMode) -> Result<BoxSet, GeomError> {
    if m.is_empty() {
        return Err(GeomError::EmptyMask);
    }
    Ok(match mode {
        BoxMode::Union => tight_box(m).into_iter().collect(),
        BoxMode::PerComponent => connected_components(m).iter().filter_map(tight_box).collect(),
    })
}

/// 8-connected foreground components as full-size masks, ordered by their
/// first pixel in row-major scan order.
pub fn connected_components(m: &BinaryMask) -> Vec<BinaryMask> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let mut seen = vec![false; m.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..m.len() {
        if seen[start] || !m.get_index(start) {
            continue;
        }
        let mut comp = BinaryMask::new(m.width(), m.height()).expect("shape already valid");
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.set_index(i, true);
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if !seen[j] && m.get_index(j) {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}
