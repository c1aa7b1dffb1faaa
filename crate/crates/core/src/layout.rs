//! Keyed partition of the canvas into template blocks and watermark blocks.
//!
//! `K` is a balanced binary matrix: a half-ones vector shuffled by a ChaCha8
//! stream seeded with the 64-bit key (ChaCha is counter-based, so the stream
//! is a pure function of the key), then laid out row-major as `N` rows of
//! `M` columns. `K(x, y) = 1` marks a template block.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// Side of the square canvas all embedding and decoding happens on.
pub const CANVAS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockRole {
    Template,
    Watermark,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    key: u64,
    cols: usize,
    rows: usize,
    /// Row-major, `rows x cols`, entries in {0, 1}.
    bits: Vec<u8>,
    block_w: usize,
    block_h: usize,
}

/// `K` upsampled to an `r x r` grid by nearest neighbour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResizedLayout {
    side: usize,
    bits: Vec<u8>,
}

/// Generates the layout for `key` on the canonical 512 canvas.
pub fn generate_layout(key: u64, cols: usize, rows: usize) -> Result<BlockLayout> {
    BlockLayout::generate(key, cols, rows)
}

pub fn resize_layout(layout: &BlockLayout, side: usize) -> Result<ResizedLayout> {
    layout.resize(side)
}

pub fn block_role(layout: &BlockLayout, x: usize, y: usize) -> Result<BlockRole> {
    layout.role(x, y)
}

impl BlockLayout {
    pub fn generate(key: u64, cols: usize, rows: usize) -> Result<Self> {
        if cols < 2 || rows < 2 {
            return Err(Error::Layout(format!(
                "need at least 2x2 blocks, got {cols}x{rows}"
            )));
        }
        let total = cols * rows;
        let ones = total.div_ceil(2);
        let mut bits: Vec<u8> = (0..total).map(|i| u8::from(i < ones)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        bits.shuffle(&mut rng);
        Ok(Self {
            key,
            cols,
            rows,
            bits,
            block_w: CANVAS / cols,
            block_h: CANVAS / rows,
        })
    }

    /// Builds a layout from an explicit matrix (row-major, `rows x cols`).
    pub fn from_bits(key: u64, cols: usize, rows: usize, bits: Vec<u8>) -> Result<Self> {
        if cols < 2 || rows < 2 {
            return Err(Error::Layout(format!(
                "need at least 2x2 blocks, got {cols}x{rows}"
            )));
        }
        if bits.len() != cols * rows || bits.iter().any(|&b| b > 1) {
            return Err(Error::Layout("matrix must hold cols*rows binary entries".into()));
        }
        Ok(Self {
            key,
            cols,
            rows,
            bits,
            block_w: CANVAS / cols,
            block_h: CANVAS / rows,
        })
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// `M`, the number of block columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `N`, the number of block rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn block_w(&self) -> usize {
        self.block_w
    }

    pub fn block_h(&self) -> usize {
        self.block_h
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// `K(x, y)` with `x` the column and `y` the row.
    pub fn k(&self, x: usize, y: usize) -> Result<u8> {
        if x >= self.cols || y >= self.rows {
            return Err(Error::Layout(format!(
                "block ({x},{y}) outside {}x{}",
                self.cols, self.rows
            )));
        }
        Ok(self.bits[y * self.cols + x])
    }

    pub fn role(&self, x: usize, y: usize) -> Result<BlockRole> {
        Ok(if self.k(x, y)? == 1 {
            BlockRole::Template
        } else {
            BlockRole::Watermark
        })
    }

    pub fn template_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn watermark_count(&self) -> usize {
        self.bits.len() - self.template_count()
    }

    /// Watermark block coordinates `(x, y)` in row-major order.
    pub fn watermark_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows)
            .flat_map(move |y| (0..self.cols).map(move |x| (x, y)))
            .filter(move |&(x, y)| self.bits[y * self.cols + x] == 0)
    }

    pub fn resize(&self, side: usize) -> Result<ResizedLayout> {
        if side == 0 || side % self.cols != 0 || side % self.rows != 0 {
            return Err(Error::Layout(format!(
                "side {side} not divisible by {}x{}",
                self.cols, self.rows
            )));
        }
        let tw = side / self.cols;
        let th = side / self.rows;
        let mut bits = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                bits.push(self.bits[(y / th) * self.cols + x / tw]);
            }
        }
        Ok(ResizedLayout { side, bits })
    }
}

impl ResizedLayout {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.bits[y * self.side + x]
    }

    pub fn to_grid<T: Real>(&self) -> Grid<T> {
        Grid::from_fn(self.side, self.side, |x, y| T::lit(self.get(x, y) as f64))
    }

    /// Tile-majority downsampling to `cols x rows` (ties resolve to 1).
    pub fn majority_downsample(&self, cols: usize, rows: usize) -> Result<Vec<u8>> {
        if self.side % cols != 0 || self.side % rows != 0 {
            return Err(Error::Layout(format!(
                "side {} not divisible by {cols}x{rows}",
                self.side
            )));
        }
        let tw = self.side / cols;
        let th = self.side / rows;
        let mut out = Vec::with_capacity(cols * rows);
        for by in 0..rows {
            for bx in 0..cols {
                let mut ones = 0usize;
                for y in by * th..(by + 1) * th {
                    for x in bx * tw..(bx + 1) * tw {
                        ones += self.get(x, y) as usize;
                    }
                }
                out.push(u8::from(2 * ones >= tw * th));
            }
        }
        Ok(out)
    }
}
