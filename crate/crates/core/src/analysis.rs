//! Gradient-propagation analysis of residual filter banks, detection error,
//! and grayscale map emission.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::env::{bank_filters, preprocess, Filter, FilterBank};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jpeg::dct::forward_dct_block;
use crate::jpeg::{build_dct_basis, decompress, DctBasisBank, JpegImage, QuantTable};

/// One `8 × 8` accumulated gradient component matrix per filter, indexed
/// `[k * 8 + l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumGradMatrix {
    pub bank: String,
    pub matrices: Vec<[f64; 64]>,
}

impl AccumGradMatrix {
    /// Each matrix min-max normalized to `[0, 1]` (constant matrices map to 0).
    pub fn normalized(&self) -> Vec<[f64; 64]> {
        self.matrices
            .iter()
            .map(|m| {
                let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut out = [0.0; 64];
                if hi > lo {
                    for (o, v) in out.iter_mut().zip(m) {
                        *o = (v - lo) / (hi - lo);
                    }
                }
                out
            })
            .collect()
    }

    /// Mode `(k, l)` of the largest entry of every matrix (first in
    /// lexicographic order on ties).
    pub fn argmax_modes(&self) -> Vec<(usize, usize)> {
        self.matrices
            .iter()
            .map(|m| {
                let mut best = 0;
                for i in 1..64 {
                    if m[i] > m[best] {
                        best = i;
                    }
                }
                (best / 8, best % 8)
            })
            .collect()
    }
}

/// How residuals are sampled for the analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    /// Use the quantization steps of the image (otherwise unit steps).
    pub dequantize: bool,
    /// Evaluate residuals only at block-aligned windows (stride 8, no
    /// padding offset) instead of the stride-1 same-padded map.
    pub block_aligned: bool,
    /// Zero the derivative wherever the image's residual is truncated.
    pub truncation: Option<f64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            dequantize: true,
            block_aligned: false,
            truncation: None,
        }
    }
}

/// Full correlation of a filter with one basis block: `R[r][c]` is the
/// residual at offset `(r − before, c − before)` from the block origin.
struct Response {
    size: usize,
    before: usize,
    abs: Vec<f64>,
}

fn response(f: &Filter, basis: &DctBasisBank, k: usize, l: usize) -> Response {
    let kf = f.size;
    let pt = (kf - 1) / 2;
    let before = kf - 1 - pt;
    let size = 8 + kf - 1;
    let mut abs = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let mut s = 0.0;
            for p in 0..kf {
                for q in 0..kf {
                    // block row = offset + p − pt, offset = r − before
                    let bi = r as isize - before as isize + p as isize - pt as isize;
                    let bj = c as isize - before as isize + q as isize - pt as isize;
                    if (0..8).contains(&bi) && (0..8).contains(&bj) {
                        s += f.get(p, q) * basis.get(k, l, bi as usize, bj as usize);
                    }
                }
            }
            abs[r * size + c] = s.abs();
        }
    }
    Response { size, before, abs }
}

/// Sum of |response| over rows `[r0, r1)` and columns `[c0, c1)`.
fn clipped_sum(resp: &Response, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    let mut s = 0.0;
    for r in r0..r1 {
        s += resp.abs[r * resp.size + c0..r * resp.size + c1].iter().sum::<f64>();
    }
    s
}

/// Valid response rows for a block starting at `origin` in an axis of
/// length `n`, grouped into (count of blocks, row range) classes.
fn axis_classes(resp: &Response, blocks: usize, n: usize) -> Vec<(usize, usize, usize)> {
    let range = |a: usize| {
        let lo = (resp.before as isize - 8 * a as isize).max(0) as usize;
        let hi = (n as isize - 8 * a as isize + resp.before as isize).min(resp.size as isize) as usize;
        (lo, hi)
    };
    let mut classes: Vec<(usize, usize, usize)> = Vec::new();
    for a in 0..blocks {
        let (lo, hi) = range(a);
        match classes.iter_mut().find(|c| c.1 == lo && c.2 == hi) {
            Some(c) => c.0 += 1,
            None => classes.push((1, lo, hi)),
        }
    }
    classes
}

/// Accumulated gradient component matrices of `bank` on images of the given
/// geometry and quantization table, through the linear chain
/// dequantize → IDCT → filter correlation.
pub fn accum_grad_matrix_linear(
    height: usize,
    width: usize,
    table: &QuantTable,
    bank: FilterBank,
    opts: &AnalysisOptions,
) -> AccumGradMatrix {
    let basis = build_dct_basis();
    let filters = bank_filters(bank);
    let (bh, bw) = (height / 8, width / 8);
    let matrices = filters
        .par_iter()
        .map(|f| {
            let mut m = [0.0; 64];
            for k in 0..8 {
                for l in 0..8 {
                    let step = if opts.dequantize { table.step(k, l) as f64 } else { 1.0 };
                    let total = if opts.block_aligned {
                        aligned_response(f, &basis, k, l) * (bh * bw) as f64
                    } else {
                        let resp = response(f, &basis, k, l);
                        let mut t = 0.0;
                        for &(na, r0, r1) in &axis_classes(&resp, bh, height) {
                            for &(nb, c0, c1) in &axis_classes(&resp, bw, width) {
                                t += (na * nb) as f64 * clipped_sum(&resp, r0, r1, c0, c1);
                            }
                        }
                        t
                    };
                    m[k * 8 + l] = step * total;
                }
            }
            m
        })
        .collect();
    AccumGradMatrix {
        bank: bank.to_string(),
        matrices,
    }
}

/// Block-aligned evaluation: the filter (zero-padded to 8×8, top-left)
/// applied to the block itself.
fn aligned_response(f: &Filter, basis: &DctBasisBank, k: usize, l: usize) -> f64 {
    let p = f.padded(8);
    let mut s = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            s += p.get(i, j) * basis.get(k, l, i, j);
        }
    }
    s.abs()
}

/// Accumulated gradient component matrices for one image. Without
/// truncation the result depends only on the image's geometry and table.
pub fn accum_grad_matrix(image: &JpegImage, bank: FilterBank, opts: &AnalysisOptions) -> Result<AccumGradMatrix> {
    let Some(t) = opts.truncation else {
        return Ok(accum_grad_matrix_linear(image.height(), image.width(), image.table(), bank, opts));
    };
    if opts.block_aligned {
        return Err(Error::InvalidInput("truncation applies to the stride-1 residual map only".into()));
    }
    let residual = preprocess(&decompress(image), bank, f64::INFINITY)?;
    let basis = build_dct_basis();
    let filters = bank_filters(bank);
    let (h, w) = image.dims();
    let matrices = filters
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            let live = Grid::from_fn(h, w, |i, j| residual.get(i, j, fi).abs() < t);
            let mut m = [0.0; 64];
            for k in 0..8 {
                for l in 0..8 {
                    let resp = response(f, &basis, k, l);
                    let step = if opts.dequantize { image.table().step(k, l) as f64 } else { 1.0 };
                    let mut total = 0.0;
                    for a in 0..h / 8 {
                        for b in 0..w / 8 {
                            for r in 0..resp.size {
                                let i = (8 * a + r) as isize - resp.before as isize;
                                if !(0..h as isize).contains(&i) {
                                    continue;
                                }
                                for c in 0..resp.size {
                                    let j = (8 * b + c) as isize - resp.before as isize;
                                    if (0..w as isize).contains(&j) && *live.get(i as usize, j as usize) {
                                        total += resp.abs[r * resp.size + c];
                                    }
                                }
                            }
                        }
                    }
                    m[k * 8 + l] = step * total;
                }
            }
            m
        })
        .collect();
    Ok(AccumGradMatrix {
        bank: bank.to_string(),
        matrices,
    })
}

/// Element-wise mean of matrix sets computed on several images.
pub fn mean_matrices(sets: &[AccumGradMatrix]) -> Result<AccumGradMatrix> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidInput("no matrices to average".into()))?;
    let mut out = first.clone();
    for s in &sets[1..] {
        if s.matrices.len() != out.matrices.len() {
            return Err(Error::DimensionMismatch("matrix sets differ in filter count".into()));
        }
        for (o, m) in out.matrices.iter_mut().zip(&s.matrices) {
            for (a, b) in o.iter_mut().zip(m) {
                *a += b;
            }
        }
    }
    let n = sets.len() as f64;
    for o in &mut out.matrices {
        o.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopNStats {
    /// `rate[n][k * 8 + l]`: number of filters ranking mode `(k, l)` within
    /// their top `n`.
    pub rate: Vec<[usize; 64]>,
    /// `s[n]`: number of modes with a nonzero top-`n` rate, `n = 0..=64`.
    pub s: Vec<usize>,
}

/// Rank of every mode in each matrix (1 = largest; ties by mode order).
pub fn mode_ranks(m: &[f64; 64]) -> [usize; 64] {
    let mut idx: Vec<usize> = (0..64).collect();
    idx.sort_by(|&a, &b| m[b].total_cmp(&m[a]).then(a.cmp(&b)));
    let mut rank = [0; 64];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

pub fn top_n_stats(matrices: &AccumGradMatrix) -> Result<TopNStats> {
    if matrices.matrices.is_empty() {
        return Err(Error::InvalidInput("top-n statistics need at least one matrix".into()));
    }
    let ranks: Vec<[usize; 64]> = matrices.matrices.iter().map(mode_ranks).collect();
    let mut rate = Vec::with_capacity(65);
    let mut s = Vec::with_capacity(65);
    for n in 0..=64 {
        let mut r = [0usize; 64];
        for rk in &ranks {
            for (slot, &o) in r.iter_mut().zip(rk) {
                if o <= n {
                    *slot += 1;
                }
            }
        }
        s.push(r.iter().filter(|&&c| c > 0).count());
        rate.push(r);
    }
    Ok(TopNStats { rate, s })
}

/// `s_n` curves as CSV: `n,<bank>,...`.
pub fn top_n_csv(curves: &[(String, TopNStats)]) -> String {
    let mut out = String::from("n");
    for (name, _) in curves {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for n in 0..=64 {
        let _ = write!(out, "{n}");
        for (_, st) in curves {
            let _ = write!(out, ",{}", st.s[n]);
        }
        out.push('\n');
    }
    out
}

/// Magnitude of the 8×8 DCT of every filter of a bank, zero-padded to 8×8.
pub fn filter_spectra(bank: FilterBank) -> Vec<[f64; 64]> {
    bank_filters(bank)
        .iter()
        .map(|f| {
            let p = f.padded(8);
            let mut block = [0.0; 64];
            block.copy_from_slice(&p.taps);
            forward_dct_block(&block).map(f64::abs)
        })
        .collect()
}

/// `P_E = min_t (P_FA(t) + P_MD(t)) / 2`, deciding "stego" when score ≥ t.
pub fn detection_error(cover_scores: &[f64], stego_scores: &[f64]) -> Result<f64> {
    if cover_scores.is_empty() || stego_scores.is_empty() {
        return Err(Error::InvalidInput("detection error needs both score lists".into()));
    }
    if cover_scores.iter().chain(stego_scores).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = cover_scores
        .iter()
        .map(|&v| (v, false))
        .chain(stego_scores.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nc, ns) = (cover_scores.len() as f64, stego_scores.len() as f64);
    // threshold at or below every score: all declared stego
    let (mut fa, mut md) = (nc, 0.0);
    let mut best = 0.5 * (fa / nc + md / ns);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                md += 1.0;
            } else {
                fa -= 1.0;
            }
            i += 1;
        }
        // threshold just above v (the next unique score, or +∞)
        best = best.min(0.5 * (fa / nc + md / ns));
    }
    Ok(best)
}

/// 8-bit min-max normalization; a constant map becomes uniform 128.
pub fn to_gray(map: &Grid<f64>) -> Grid<u8> {
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return map.map(|_| 128);
    }
    map.map(|&v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
}

/// Modification levels `{−1, 0, +1}` → `{0, 128, 255}`.
pub fn modification_gray(map: &Grid<i8>) -> Grid<u8> {
    map.map(|&m| match m.signum() {
        -1 => 0,
        0 => 128,
        _ => 255,
    })
}

/// 8×8 matrix as a heat map, each entry drawn as a `scale × scale` square.
pub fn matrix_heatmap(m: &[f64; 64], scale: usize) -> Grid<u8> {
    let g = to_gray(&Grid::from_fn(8, 8, |k, l| m[k * 8 + l]));
    Grid::from_fn(8 * scale, 8 * scale, |i, j| *g.get(i / scale, j / scale))
}

/// Binary PGM (`P5`) encoding.
/// All matrices of a bank as heatmap tiles on a square-ish grid, one-pixel
/// gutters between tiles.
pub fn bank_mosaic(m: &AccumGradMatrix, scale: usize) -> Grid<u8> {
    let n = m.matrices.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let tile = 8 * scale + 1;
    let mut out = Grid::filled(rows * tile, cols * tile, 0u8);
    for (f, mat) in m.matrices.iter().enumerate() {
        let h = matrix_heatmap(mat, scale);
        let (r0, c0) = ((f / cols) * tile, (f % cols) * tile);
        for i in 0..8 * scale {
            for j in 0..8 * scale {
                *out.get_mut(r0 + i, c0 + j) = *h.get(i, j);
            }
        }
    }
    out
}

pub fn encode_pgm(img: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_slice());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Grid<u8>> {
    let bad = || Error::Format("not an 8-bit binary PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..pos + w * h).ok_or_else(bad)?;
    if pos + w * h != bytes.len() {
        return Err(bad());
    }
    Grid::from_vec(h, w, data.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_error_examples() {
        assert_eq!(detection_error(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(detection_error(&[0.1, 0.4], &[0.3, 0.9]).unwrap(), 0.25);
        assert_eq!(detection_error(&[0.5, 0.7], &[0.5, 0.7]).unwrap(), 0.5);
        assert!(detection_error(&[], &[1.0]).is_err());
    }

    #[test]
    fn ranks_break_ties_lexicographically() {
        let mut m = [0.0; 64];
        m[5] = 1.0;
        m[3] = 1.0;
        let r = mode_ranks(&m);
        assert_eq!((r[3], r[5], r[0], r[1]), (1, 2, 3, 4));
        let st = top_n_stats(&AccumGradMatrix { bank: "x".into(), matrices: vec![m] }).unwrap();
        assert_eq!(st.s[0], 0);
        assert_eq!(st.s[64], 64);
        assert_eq!(st.s[1], 1);
    }

    #[test]
    fn gray_levels() {
        assert!(to_gray(&Grid::filled(3, 3, 7.0)).iter().all(|&v| v == 128));
        let mut m = Grid::filled(2, 2, 0i8);
        *m.get_mut(1, 0) = 1;
        let g = modification_gray(&m);
        assert_eq!(g.as_slice(), &[128, 128, 255, 128]);
        let bytes = encode_pgm(&g);
        assert_eq!(decode_pgm(&bytes).unwrap(), g);
        assert!(decode_pgm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn axis_classes_count_every_block() {
        let basis = build_dct_basis();
        let f = &bank_filters(FilterBank::Dct8)[0];
        let resp = response(f, &basis, 0, 0);
        let cls = axis_classes(&resp, 4, 32);
        assert_eq!(cls.iter().map(|c| c.0).sum::<usize>(), 4);
        assert_eq!(cls.len(), 3);
    }
}
