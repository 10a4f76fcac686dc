//! Grayscale JPEG images at the quantized-DCT-coefficient level.
//!
//! Coefficients are addressed either by flat pixel position `(i, j)` or by
//! block/mode `(a, b, k, l)`, all zero-based here: block `(a, b)` covers rows
//! `8a..8a+8` and columns `8b..8b+8`, and mode `(k, l)` is the offset inside
//! the block, so `(i, j) = (8a + k, 8b + l)`.

mod container;
pub mod dct;
mod parser;
mod quant;

pub use container::{read_jcoef, write_jcoef};
pub use dct::{build_dct_basis, decompress, decompress_with, forward_dct_block, DctBasisBank};
pub use parser::parse_baseline_jpeg;
pub use quant::STD_LUMINANCE;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Unrounded, unclamped decompressed intensities.
pub type PixelPlane = Grid<f64>;

/// Quantization step per DCT mode, row-major `(k, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable {
    steps: [[u16; 8]; 8],
}

impl QuantTable {
    pub fn new(steps: [[u16; 8]; 8]) -> Result<Self> {
        if steps.iter().flatten().any(|&s| s == 0) {
            return Err(Error::InvalidInput("quantization steps must be >= 1".into()));
        }
        Ok(QuantTable { steps })
    }

    pub fn from_row_major(steps: &[u16]) -> Result<Self> {
        if steps.len() != 64 {
            return Err(Error::InvalidInput(format!(
                "quantization table needs 64 steps, got {}",
                steps.len()
            )));
        }
        let mut grid = [[0u16; 8]; 8];
        for (n, &s) in steps.iter().enumerate() {
            grid[n / 8][n % 8] = s;
        }
        QuantTable::new(grid)
    }

    /// All-ones table (no quantization).
    pub fn unit() -> Self {
        QuantTable { steps: [[1; 8]; 8] }
    }

    /// Standard luminance table scaled by the IJG quality rule.
    pub fn from_quality(qf: u32) -> Result<Self> {
        quant::quality_to_quant_table(qf)
    }

    #[inline]
    pub fn step(&self, k: usize, l: usize) -> u16 {
        self.steps[k][l]
    }

    pub fn steps(&self) -> &[[u16; 8]; 8] {
        &self.steps
    }

    pub fn to_row_major(&self) -> [u16; 64] {
        let mut out = [0u16; 64];
        for k in 0..8 {
            for l in 0..8 {
                out[k * 8 + l] = self.steps[k][l];
            }
        }
        out
    }
}

/// A grayscale JPEG as its quantized DCT coefficients plus quantization table.
#[derive(Debug, Clone, PartialEq)]
pub struct JpegImage {
    coefficients: Grid<i32>,
    table: QuantTable,
}

impl JpegImage {
    pub fn new(coefficients: Grid<i32>, table: QuantTable) -> Result<Self> {
        let (h, w) = coefficients.dims();
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::UnsupportedGeometry(format!(
                "{h}x{w} is not a positive multiple of 8"
            )));
        }
        Ok(JpegImage {
            coefficients,
            table,
        })
    }

    pub fn zeros(height: usize, width: usize, table: QuantTable) -> Result<Self> {
        JpegImage::new(Grid::filled(height, width, 0), table)
    }

    pub fn height(&self) -> usize {
        self.coefficients.height()
    }

    pub fn width(&self) -> usize {
        self.coefficients.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.coefficients.dims()
    }

    pub fn blocks_high(&self) -> usize {
        self.height() / 8
    }

    pub fn blocks_wide(&self) -> usize {
        self.width() / 8
    }

    pub fn table(&self) -> &QuantTable {
        &self.table
    }

    pub fn coefficients(&self) -> &Grid<i32> {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut Grid<i32> {
        &mut self.coefficients
    }

    #[inline]
    pub fn coef(&self, a: usize, b: usize, k: usize, l: usize) -> i32 {
        let (i, j) = block_to_flat(a, b, k, l);
        *self.coefficients.get(i, j)
    }

    pub fn set_coef(&mut self, a: usize, b: usize, k: usize, l: usize, value: i32) {
        let (i, j) = block_to_flat(a, b, k, l);
        *self.coefficients.get_mut(i, j) = value;
    }

    /// `Y = X + M` for a ternary modification map.
    pub fn apply_modifications(&self, modifications: &Grid<i8>) -> Result<JpegImage> {
        self.coefficients
            .same_dims(modifications, "modification map")?;
        let data = self
            .coefficients
            .iter()
            .zip(modifications.iter())
            .map(|(&x, &m)| x + m as i32)
            .collect();
        Ok(JpegImage {
            coefficients: Grid::from_vec(self.height(), self.width(), data)?,
            table: self.table,
        })
    }

    /// Number of non-zero AC coefficients (DC terms excluded).
    pub fn count_nzac(&self) -> usize {
        let w = self.width();
        self.coefficients
            .iter()
            .enumerate()
            .filter(|&(n, &x)| x != 0 && !((n / w) % 8 == 0 && (n % w) % 8 == 0))
            .count()
    }
}

/// `(a, b, k, l)` → `(8a + k, 8b + l)`.
#[inline]
pub fn block_to_flat(a: usize, b: usize, k: usize, l: usize) -> (usize, usize) {
    (8 * a + k, 8 * b + l)
}

/// `(i, j)` → `(a, b, k, l)`.
#[inline]
pub fn flat_to_block(i: usize, j: usize) -> (usize, usize, usize, usize) {
    (i / 8, j / 8, i % 8, j % 8)
}

pub fn count_nzac(image: &JpegImage) -> usize {
    image.count_nzac()
}

/// Reads a `.jcoef` container, or any other file as a baseline JPEG.
pub fn read_image(path: &std::path::Path) -> Result<JpegImage> {
    let bytes = std::fs::read(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("jcoef") {
        read_jcoef(&bytes)
    } else {
        parse_baseline_jpeg(&bytes)
    }
}

/// Whether `path` looks like an image [`read_image`] accepts.
pub fn is_image_path(path: &std::path::Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("jcoef" | "jpg" | "jpeg")
    )
}
