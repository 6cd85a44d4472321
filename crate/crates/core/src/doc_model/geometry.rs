use serde::{Deserialize, Serialize};

use super::types::PixelBox;
use crate::error::{Error, Result};

/// Side length of the normalized coordinate grid.
pub const GRID_MAX: u32 = 1000;

/// Box on the normalized `0..=1000` grid: `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridBox(pub [u32; 4]);

impl GridBox {
    pub fn width(&self) -> u32 {
        self.0[2] - self.0[0]
    }

    pub fn height(&self) -> u32 {
        self.0[3] - self.0[1]
    }

    pub fn center(&self) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.0;
        ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0)
    }

    /// The six features summed by the 2D embedding: x0, y0, x1, y1, width, height.
    pub fn features(&self) -> [usize; 6] {
        let [x0, y0, x1, y1] = self.0;
        [
            x0 as usize,
            y0 as usize,
            x1 as usize,
            y1 as usize,
            self.width() as usize,
            self.height() as usize,
        ]
    }
}

/// Maps a pixel box onto the grid: `floor(coord / dim * 1000)` clamped to `[0, 1000]`.
pub fn normalize_box(b: PixelBox, page_size: [f64; 2]) -> Result<GridBox> {
    let [w, h] = page_size;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidBox(format!("page dimension is zero: {w}x{h}")));
    }
    let scale = |c: f64, dim: f64| -> u32 {
        ((c * GRID_MAX as f64 / dim).floor()).clamp(0.0, GRID_MAX as f64) as u32
    };
    Ok(GridBox([
        scale(b[0], w),
        scale(b[1], h),
        scale(b[2], w),
        scale(b[3], h),
    ]))
}

/// Hull of the member boxes of a segment.
pub fn merged_box(segment: &[usize], boxes: &[GridBox]) -> Result<GridBox> {
    let mut it = segment.iter().map(|&i| boxes[i].0);
    let first = it.next().ok_or(Error::EmptySegment)?;
    let hull = it.fold(first, |acc, b| {
        [acc[0].min(b[0]), acc[1].min(b[1]), acc[2].max(b[2]), acc[3].max(b[3])]
    });
    Ok(GridBox(hull))
}

/// Euclidean distance between the centers of two segments' merged boxes.
pub fn segment_center_distance(a: &[usize], b: &[usize], boxes: &[GridBox]) -> Result<f64> {
    let (ax, ay) = merged_box(a, boxes)?.center();
    let (bx, by) = merged_box(b, boxes)?.center();
    Ok((ax - bx).hypot(ay - by))
}

/// 1-based positions of a segment's tokens in reading order.
pub fn local_positions(segment: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = segment.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::NonContiguousSegment(segment.to_vec()));
    }
    Ok((1..=segment.len()).collect())
}
