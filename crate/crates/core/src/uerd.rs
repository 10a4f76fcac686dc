//! UERD: uniform embedding revisited distortion.

use crate::distortion::{CostMap, WET_COST};
use crate::grid::Grid;
use crate::jpeg::{JpegImage, QuantTable};

/// `(H/8) × (W/8)` block energies.
pub type BlockEnergyMap = Grid<f64>;

/// `E_{a,b} = Σ_{k,l} |x| · s_{k,l}`.
pub fn block_energy(image: &JpegImage) -> BlockEnergyMap {
    let table = image.table();
    Grid::from_fn(image.blocks_high(), image.blocks_wide(), |a, b| {
        let mut e = 0.0;
        for k in 0..8 {
            for l in 0..8 {
                e += image.coef(a, b, k, l).unsigned_abs() as f64 * table.step(k, l) as f64;
            }
        }
        e
    })
}

/// `E_{a,b} + ¼ Σ` over the in-image 8-neighbours.
pub fn neighbourhood_energy(energy: &BlockEnergyMap) -> Grid<f64> {
    let (bh, bw) = energy.dims();
    Grid::from_fn(bh, bw, |a, b| {
        let mut ring = 0.0;
        for da in -1isize..=1 {
            for db in -1isize..=1 {
                if da == 0 && db == 0 {
                    continue;
                }
                let (na, nb) = (a as isize + da, b as isize + db);
                if na >= 0 && nb >= 0 && (na as usize) < bh && (nb as usize) < bw {
                    ring += *energy.get(na as usize, nb as usize);
                }
            }
        }
        *energy.get(a, b) + 0.25 * ring
    })
}

/// `1 / (E + ¼ Σ Ê)`; zero denominators become wet.
pub fn block_suitability(energy: &BlockEnergyMap) -> Grid<f64> {
    neighbourhood_energy(energy).map(|&d| if d > 0.0 { 1.0 / d } else { WET_COST })
}

/// Quantization step per mode; the DC mode takes the mean of its two
/// lowest-frequency AC neighbours.
pub fn mode_suitability(table: &QuantTable) -> Grid<f64> {
    Grid::from_fn(8, 8, |k, l| {
        if k == 0 && l == 0 {
            0.5 * (table.step(1, 0) as f64 + table.step(0, 1) as f64)
        } else {
            table.step(k, l) as f64
        }
    })
}

pub fn uerd_cost(image: &JpegImage) -> CostMap {
    let block = block_suitability(&block_energy(image));
    let mode = mode_suitability(image.table());
    Grid::from_fn(image.height(), image.width(), |i, j| {
        block.get(i / 8, j / 8) * mode.get(i % 8, j % 8)
    })
}
