//! Fixed pixel-level texture providers: directional Daubechies residuals and
//! the block-energy (MSU) map.

use crate::grid::{Grid, Volume};
use crate::jpeg::{JpegImage, PixelPlane};
use crate::uerd::{block_energy, neighbourhood_energy};

/// H × W × C nonnegative texture values.
pub type TextureMap = Volume;

/// Daubechies-8 decomposition low-pass filter (16 taps).
pub const DB8_LO: [f64; 16] = [
    -0.000_117_476_784_124_769_53,
    0.000_675_449_406_450_569_3,
    -0.000_391_740_373_376_947_05,
    -0.004_870_352_993_451_574,
    0.008_746_094_047_405_777,
    0.013_981_027_917_398_282,
    -0.044_088_253_930_794_755,
    -0.017_369_301_001_807_547,
    0.128_747_426_620_478_47,
    0.000_472_484_573_913_282_8,
    -0.284_015_542_961_546_9,
    -0.015_829_105_256_349_306,
    0.585_354_683_654_206_7,
    0.675_630_736_297_289_8,
    0.312_871_590_914_299_95,
    0.054_415_842_243_104_01,
];

/// Quadrature-mirror high-pass partner of [`DB8_LO`].
pub fn db8_hi() -> [f64; 16] {
    let mut hi = [0.0; 16];
    for (n, h) in hi.iter_mut().enumerate() {
        let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
        *h = sign * DB8_LO[15 - n];
    }
    hi
}

/// Row and column factors of the LH, HL and HH kernels: `K[p][q] = col[p]·row[q]`.
pub fn directional_factors() -> [([f64; 16], [f64; 16]); 3] {
    let lo = DB8_LO;
    let hi = db8_hi();
    let normalize = |mut f: [f64; 16]| {
        let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= n);
        f
    };
    let (lo, hi) = (normalize(lo), normalize(hi));
    [(lo, hi), (hi, lo), (hi, hi)]
}

/// The three 16×16 directional kernels, row-major.
pub fn directional_kernels() -> [Vec<f64>; 3] {
    directional_factors().map(|(col, row)| {
        let mut k = vec![0.0; 256];
        for p in 0..16 {
            for q in 0..16 {
                k[p * 16 + q] = col[p] * row[q];
            }
        }
        k
    })
}

/// Kernel origin for 16-tap "same" convolution.
pub const KERNEL_ORIGIN: isize = 8;

/// Half-sample symmetric reflection (`x[−1] = x[0]`).
#[inline]
pub fn mirror(mut idx: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if idx < 0 {
            idx = -idx - 1;
        } else if idx >= n {
            idx = 2 * n - idx - 1;
        } else {
            return idx as usize;
        }
    }
}

fn convolve_rows(plane: &Grid<f64>, taps: &[f64; 16]) -> Grid<f64> {
    let w = plane.width();
    Grid::from_fn(plane.height(), w, |i, j| {
        taps.iter()
            .enumerate()
            .map(|(q, t)| t * plane.get(i, mirror(j as isize - q as isize + KERNEL_ORIGIN, w)))
            .sum()
    })
}

fn convolve_cols(plane: &Grid<f64>, taps: &[f64; 16]) -> Grid<f64> {
    let h = plane.height();
    Grid::from_fn(h, plane.width(), |i, j| {
        taps.iter()
            .enumerate()
            .map(|(p, t)| t * plane.get(mirror(i as isize - p as isize + KERNEL_ORIGIN, h), j))
            .sum()
    })
}

/// `|pixels ⊛ K_c|` for the LH, HL and HH kernels, mirror-padded.
pub fn wavelet_texture(pixels: &PixelPlane) -> TextureMap {
    let (h, w) = pixels.dims();
    let mut out = Volume::zeros(h, w, 3);
    for (c, (col, row)) in directional_factors().iter().enumerate() {
        let r = convolve_cols(&convolve_rows(pixels, row), col);
        for i in 0..h {
            for j in 0..w {
                out.set(i, j, c, r.get(i, j).abs());
            }
        }
    }
    out
}

/// Block energy plus a quarter of the neighbours', replicated over each
/// 8×8 footprint.
pub fn msu_texture(image: &JpegImage) -> TextureMap {
    let t = neighbourhood_energy(&block_energy(image));
    Volume::from_grid(&nearest_upsample(&t, 8))
}

pub fn nearest_upsample(grid: &Grid<f64>, factor: usize) -> Grid<f64> {
    Grid::from_fn(grid.height() * factor, grid.width() * factor, |i, j| {
        *grid.get(i / factor, j / factor)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jpeg::QuantTable;

    #[test]
    fn filters_are_unit_norm_and_high_pass() {
        let hi = db8_hi();
        assert!(hi.iter().sum::<f64>().abs() < 1e-12);
        assert!((DB8_LO.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
        for k in directional_kernels() {
            assert!((k.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn constant_plane_has_no_texture() {
        let t = wavelet_texture(&Grid::filled(32, 32, 91.5));
        assert!(t.as_slice().iter().all(|&x| x < 1e-9));
    }

    #[test]
    fn impulse_response_is_kernel() {
        let mut plane = Grid::filled(40, 40, 0.0);
        *plane.get_mut(20, 20) = 1.0;
        let t = wavelet_texture(&plane);
        let kernels = directional_kernels();
        for c in 0..3 {
            for p in 0..16 {
                for q in 0..16 {
                    let (i, j) = (20 + p - 8, 20 + q - 8);
                    assert!((t.get(i, j, c) - kernels[c][p * 16 + q].abs()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mirror_indices() {
        assert_eq!(mirror(-1, 5), 0);
        assert_eq!(mirror(-3, 5), 2);
        assert_eq!(mirror(5, 5), 4);
        assert_eq!(mirror(7, 5), 2);
        assert_eq!(mirror(-9, 3), 2);
    }

    #[test]
    fn msu_single_block() {
        let mut img = JpegImage::zeros(24, 24, QuantTable::unit()).unwrap();
        img.set_coef(1, 1, 0, 3, 8);
        let t = msu_texture(&img);
        assert_eq!(t.get(12, 12, 0), 8.0);
        assert_eq!(t.get(0, 0, 0), 2.0);
        assert_eq!(t.get(23, 8, 0), 2.0);
        let zero = msu_texture(&JpegImage::zeros(16, 16, QuantTable::unit()).unwrap());
        assert!(zero.as_slice().iter().all(|&x| x == 0.0));
    }
}
