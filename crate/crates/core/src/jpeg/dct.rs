//! Orthonormal 8×8 DCT-II basis and the rounding-free decompression map.

use std::f64::consts::PI;

use super::{JpegImage, PixelPlane, QuantTable};
use crate::grid::Grid;

/// JPEG level shift.
pub const LEVEL_SHIFT: f64 = 128.0;

/// 1-D orthonormal DCT vectors for an `n`-point transform: `row[u][i]`.
pub fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    (0..n)
        .map(|u| {
            let w = if u == 0 { 1.0 } else { 2f64.sqrt() };
            (0..n)
                .map(|i| w / nf.sqrt() * (PI * u as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                .collect()
        })
        .collect()
}

/// The `n × n` basis filters of an `n`-point 2-D DCT, ordered `u * n + v`,
/// each stored row-major `i * n + j`.
pub fn dct_basis(n: usize) -> Vec<Vec<f64>> {
    let c = dct_matrix(n);
    let mut out = Vec::with_capacity(n * n);
    for u in 0..n {
        for v in 0..n {
            let mut f = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    f[i * n + j] = c[u][i] * c[v][j];
                }
            }
            out.push(f);
        }
    }
    out
}

/// The 64 filters `Z^{u,v}` of the 8×8 DCT, zero-based frequencies.
#[derive(Debug, Clone)]
pub struct DctBasisBank {
    filters: Vec<[f64; 64]>,
}

impl DctBasisBank {
    /// `Z^{u,v}` as a row-major 8×8 array.
    pub fn filter(&self, u: usize, v: usize) -> &[f64; 64] {
        &self.filters[u * 8 + v]
    }

    pub fn get(&self, u: usize, v: usize, i: usize, j: usize) -> f64 {
        self.filters[u * 8 + v][i * 8 + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64; 64]> {
        self.filters.iter()
    }
}

/// `z^{u,v}_{i,j} = (w_u w_v / 8) cos(πu(2i+1)/16) cos(πv(2j+1)/16)`.
pub fn build_dct_basis() -> DctBasisBank {
    let mut filters = vec![[0.0; 64]; 64];
    for u in 0..8 {
        for v in 0..8 {
            let wu = if u == 0 { 1.0 } else { 2f64.sqrt() };
            let wv = if v == 0 { 1.0 } else { 2f64.sqrt() };
            for i in 0..8 {
                for j in 0..8 {
                    filters[u * 8 + v][i * 8 + j] = wu * wv / 8.0
                        * (PI * u as f64 * (2 * i + 1) as f64 / 16.0).cos()
                        * (PI * v as f64 * (2 * j + 1) as f64 / 16.0).cos();
                }
            }
        }
    }
    DctBasisBank { filters }
}

fn dct8() -> [[f64; 8]; 8] {
    let m = dct_matrix(8);
    let mut out = [[0.0; 8]; 8];
    for u in 0..8 {
        out[u].copy_from_slice(&m[u]);
    }
    out
}

/// Spatial block from frequency block: `P = Cᵀ F C`.
pub fn inverse_dct_block(freq: &[f64; 64]) -> [f64; 64] {
    let c = dct8();
    let mut tmp = [0.0; 64];
    // tmp[u][j] = Σ_v F[u][v] c[v][j]
    for u in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += freq[u * 8 + v] * c[v][j];
            }
            tmp[u * 8 + j] = acc;
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += c[u][i] * tmp[u * 8 + j];
            }
            out[i * 8 + j] = acc;
        }
    }
    out
}

/// Frequency block from spatial block: `F[u][v] = ⟨P, Z^{u,v}⟩`.
pub fn forward_dct_block(pixels: &[f64; 64]) -> [f64; 64] {
    let c = dct8();
    let mut tmp = [0.0; 64];
    // tmp[u][j] = Σ_i c[u][i] P[i][j]
    for u in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for i in 0..8 {
                acc += c[u][i] * pixels[i * 8 + j];
            }
            tmp[u * 8 + j] = acc;
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += tmp[u * 8 + j] * c[v][j];
            }
            out[u * 8 + v] = acc;
        }
    }
    out
}

/// Dequantize and inverse-transform every block, adding the level shift.
/// No rounding and no clamping.
pub fn decompress(image: &JpegImage) -> PixelPlane {
    decompress_with(image, true)
}

pub fn decompress_with(image: &JpegImage, level_shift: bool) -> PixelPlane {
    let (h, w) = image.dims();
    let table = image.table();
    let shift = if level_shift { LEVEL_SHIFT } else { 0.0 };
    let mut out = Grid::filled(h, w, shift);
    for a in 0..image.blocks_high() {
        for b in 0..image.blocks_wide() {
            let mut freq = [0.0; 64];
            for k in 0..8 {
                for l in 0..8 {
                    freq[k * 8 + l] = image.coef(a, b, k, l) as f64 * table.step(k, l) as f64;
                }
            }
            let block = inverse_dct_block(&freq);
            for k in 0..8 {
                for l in 0..8 {
                    *out.get_mut(8 * a + k, 8 * b + l) += block[k * 8 + l];
                }
            }
        }
    }
    out
}

/// Blockwise forward DCT of `pixels − shift`, divided by the quantization
/// steps; the exact inverse of [`decompress_with`] before rounding.
pub fn dequantize_inverse(pixels: &PixelPlane, table: &QuantTable, level_shift: bool) -> Grid<f64> {
    let shift = if level_shift { LEVEL_SHIFT } else { 0.0 };
    let mut out = Grid::filled(pixels.height(), pixels.width(), 0.0);
    for a in 0..pixels.height() / 8 {
        for b in 0..pixels.width() / 8 {
            let mut block = [0.0; 64];
            for i in 0..8 {
                for j in 0..8 {
                    block[i * 8 + j] = *pixels.get(8 * a + i, 8 * b + j) - shift;
                }
            }
            let freq = forward_dct_block(&block);
            for k in 0..8 {
                for l in 0..8 {
                    *out.get_mut(8 * a + k, 8 * b + l) = freq[k * 8 + l] / table.step(k, l) as f64;
                }
            }
        }
    }
    out
}

/// Adjoint of the dequantize-then-IDCT map: pulls a gradient with respect to
/// pixels back onto the quantized coefficients,
/// `g^{k,l}_{a,b} = s_{k,l} ⟨G_{a,b}, Z^{k,l}⟩`.
pub fn pixel_gradient_to_coefficients(grad: &Grid<f64>, table: &QuantTable) -> Grid<f64> {
    let mut out = Grid::filled(grad.height(), grad.width(), 0.0);
    for a in 0..grad.height() / 8 {
        for b in 0..grad.width() / 8 {
            let mut block = [0.0; 64];
            for i in 0..8 {
                for j in 0..8 {
                    block[i * 8 + j] = *grad.get(8 * a + i, 8 * b + j);
                }
            }
            let freq = forward_dct_block(&block);
            for k in 0..8 {
                for l in 0..8 {
                    *out.get_mut(8 * a + k, 8 * b + l) = freq[k * 8 + l] * table.step(k, l) as f64;
                }
            }
        }
    }
    out
}
