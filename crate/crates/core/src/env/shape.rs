use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary object shape, row-major.
///
/// An object's position is the pixel under the shape's anchor cell
/// `(width / 2, height / 2)`, so odd-sized shapes are centred exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeBitmap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl ShapeBitmap {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty shape {width}x{height}")));
        }
        if mask.len() != width * height {
            return Err(Error::Shape(format!(
                "mask has {} cells, expected {}",
                mask.len(),
                width * height
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::Shape("mask has no set cell".into()));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn rect(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height]).expect("non-empty rectangle")
    }

    /// Square of side `size` with the corners cut at 45 degrees; stands in
    /// for a circle on the pixel grid.
    pub fn octagon(size: usize) -> Self {
        let cut = size / 3;
        let mut mask = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                let dx = x.min(size - 1 - x);
                let dy = y.min(size - 1 - y);
                mask[y * size + x] = dx + dy >= cut;
            }
        }
        Self::new(size, size, mask).expect("octagon has set cells")
    }

    /// Full rectangle with `gap` cleared columns in the middle.
    pub fn split_bar(width: usize, height: usize, gap: usize) -> Self {
        let start = (width - gap) / 2;
        let mut mask = vec![true; width * height];
        for y in 0..height {
            for x in start..start + gap {
                mask[y * width + x] = false;
            }
        }
        Self::new(width, height, mask).expect("split bar keeps its flippers")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn anchor(&self) -> (i32, i32) {
        ((self.width / 2) as i32, (self.height / 2) as i32)
    }

    pub fn is_set(&self, col: usize, row: usize) -> bool {
        col < self.width && row < self.height && self.mask[row * self.width + col]
    }

    pub fn set_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Offsets of set cells relative to the anchor.
    pub fn offsets(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        let (ax, ay) = self.anchor();
        (0..self.height).flat_map(move |row| {
            (0..self.width).filter_map(move |col| {
                self.mask[row * self.width + col].then_some((col as i32 - ax, row as i32 - ay))
            })
        })
    }

    /// Bounding box relative to the anchor: `(min_dx, min_dy, max_dx, max_dy)`.
    pub fn extent(&self) -> (i32, i32, i32, i32) {
        let (ax, ay) = self.anchor();
        (
            -ax,
            -ay,
            self.width as i32 - 1 - ax,
            self.height as i32 - 1 - ay,
        )
    }

    /// Half extent along x, measured from the anchor to the farther edge.
    pub fn half_width(&self) -> i32 {
        let (a, _, b, _) = self.extent();
        (-a).max(b)
    }

    pub fn half_height(&self) -> i32 {
        let (_, a, _, b) = self.extent();
        (-a).max(b)
    }

    /// Whether any row of column `dx` (relative to the anchor) is set.
    pub fn column_set(&self, dx: i32) -> bool {
        let col = dx + self.anchor().0;
        if col < 0 || col as usize >= self.width {
            return false;
        }
        (0..self.height).any(|row| self.mask[row * self.width + col as usize])
    }
}
