//! Browser bindings for three operations: UERD cost heatmaps, embedding
//! simulation at a payload, and accumulated-gradient heatmaps of the
//! residual filter banks.

use jecrl::analysis::{accum_grad_matrix_linear, bank_mosaic, modification_gray, to_gray, AnalysisOptions};
use jecrl::distortion::{payload_entropy, probabilities_from_costs, simulate_embedding, solve_lambda, PayloadSpec};
use jecrl::env::FilterBank;
use jecrl::jpeg::{decompress, JpegImage, QuantTable};
use jecrl::trainer::{compress, synthetic_cover};
use jecrl::uerd::uerd_cost;
use jecrl::{Error, Grid, Result};
use wasm_bindgen::prelude::*;

/// A grayscale picture plus a one-line description.
#[wasm_bindgen]
pub struct View {
    gray: Grid<u8>,
    summary: String,
}

#[wasm_bindgen]
impl View {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.gray.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.gray.height()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    /// Pixels as RGBA bytes, ready for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.gray.iter().flat_map(|&g| [g, g, g, 255]).collect()
    }
}

impl View {
    pub fn gray(&self) -> &Grid<u8> {
        &self.gray
    }
}

/// Luma of an RGBA buffer, cropped to whole 8×8 blocks, JPEG-compressed.
pub fn cover_from_rgba(rgba: &[u8], width: usize, height: usize, qf: u32) -> Result<JpegImage> {
    if rgba.len() != 4 * width * height {
        return Err(Error::InvalidInput(format!("expected {} RGBA bytes, got {}", 4 * width * height, rgba.len())));
    }
    let (h, w) = (height / 8 * 8, width / 8 * 8);
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput("image smaller than one 8x8 block".into()));
    }
    let luma = Grid::from_fn(h, w, |i, j| {
        let p = &rgba[4 * (i * width + j)..];
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    });
    compress(&luma, qf)
}

pub fn cost_view(cover: &JpegImage) -> View {
    let costs = uerd_cost(cover);
    let finite: Vec<f64> = costs.iter().cloned().filter(|c| *c < 1e6).collect();
    let cap = finite.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let wet = costs.len() - finite.len();
    View {
        gray: to_gray(&costs.map(|&c| c.min(cap).ln())),
        summary: format!(
            "{}x{} UERD costs, log scale; {} wet coefficients, largest finite cost {:.3}",
            cover.width(),
            cover.height(),
            wet,
            cap
        ),
    }
}

pub fn embed_view(cover: &JpegImage, bpnzac: f64, seed: u64) -> Result<View> {
    let costs = uerd_cost(cover);
    let capacity = PayloadSpec::Bpnzac(bpnzac).resolve(cover);
    let lambda = solve_lambda(&costs, capacity)?;
    let policy = probabilities_from_costs(&costs, lambda)?;
    let m = simulate_embedding(&policy, seed);
    let changes = m.iter().filter(|&&v| v != 0).count();
    Ok(View {
        gray: modification_gray(&m),
        summary: format!(
            "{bpnzac} bpnzAC = {capacity:.1} bits, lambda {lambda:.4}, entropy {:.1} bits, {changes} changes",
            payload_entropy(&policy)
        ),
    })
}

pub fn gradient_view(bank: &str, qf: u32) -> Result<View> {
    let bank: FilterBank = bank.parse()?;
    let table = QuantTable::from_quality(qf)?;
    let m = accum_grad_matrix_linear(64, 64, &table, bank, &AnalysisOptions::default());
    let own = m.argmax_modes().iter().enumerate().filter(|(f, &(k, l))| k * 8 + l == *f).count();
    Ok(View {
        gray: bank_mosaic(&m, 4),
        summary: format!("{} filters at QF {qf}; {own} peak at the mode with their own index", m.matrices.len()),
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA pixels of a half-smooth, half-noisy synthetic cover.
#[wasm_bindgen]
pub fn synthetic_rgba(size: usize, seed: u64) -> std::result::Result<Vec<u8>, JsError> {
    let (img, _) = synthetic_cover(size, 95, seed).map_err(js)?;
    Ok(decompress(&img).iter().flat_map(|&p| {
        let g = p.round().clamp(0.0, 255.0) as u8;
        [g, g, g, 255]
    }).collect())
}

#[wasm_bindgen]
pub fn uerd_costs(rgba: &[u8], width: usize, height: usize, qf: u32) -> std::result::Result<View, JsError> {
    Ok(cost_view(&cover_from_rgba(rgba, width, height, qf).map_err(js)?))
}

#[wasm_bindgen]
pub fn embed(rgba: &[u8], width: usize, height: usize, qf: u32, bpnzac: f64, seed: u64) -> std::result::Result<View, JsError> {
    embed_view(&cover_from_rgba(rgba, width, height, qf).map_err(js)?, bpnzac, seed).map_err(js)
}

#[wasm_bindgen]
pub fn gradient_heatmap(bank: &str, qf: u32) -> std::result::Result<View, JsError> {
    gradient_view(bank, qf).map_err(js)
}
