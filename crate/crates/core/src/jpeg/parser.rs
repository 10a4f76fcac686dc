//! Minimal baseline-sequential grayscale JPEG reader that stops at the
//! quantized coefficients (no dequantization, no IDCT).

use super::{JpegImage, QuantTable};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Zigzag position → natural (row-major) index.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedJpeg(msg.into())
}

fn unsupported(msg: impl Into<String>) -> Error {
    Error::UnsupportedVariant(msg.into())
}

#[derive(Clone)]
struct HuffmanTable {
    // canonical decoding tables indexed by code length 1..=16
    maxcode: [i32; 17],
    valptr: [i32; 17],
    mincode: [i32; 17],
    values: Vec<u8>,
}

impl HuffmanTable {
    fn new(counts: &[u8; 16], values: Vec<u8>) -> Result<Self> {
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if total != values.len() || total > 256 {
            return Err(malformed("inconsistent Huffman table"));
        }
        let mut maxcode = [-1i32; 17];
        let mut valptr = [0i32; 17];
        let mut mincode = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = counts[len - 1] as i32;
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(malformed("over-subscribed Huffman table"));
            }
            code <<= 1;
        }
        Ok(HuffmanTable {
            maxcode,
            valptr,
            mincode,
            values,
        })
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| malformed("unexpected end of stream"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(malformed("segment runs past end of stream"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn segment(&mut self) -> Result<&'a [u8]> {
        let len = self.u16()? as usize;
        if len < 2 {
            return Err(malformed("segment length below 2"));
        }
        self.take(len - 2)
    }

    /// Next marker code, skipping fill bytes.
    fn marker(&mut self) -> Result<u8> {
        if self.u8()? != 0xFF {
            return Err(malformed("expected marker"));
        }
        let mut m = self.u8()?;
        while m == 0xFF {
            m = self.u8()?;
        }
        Ok(m)
    }
}

/// Entropy-coded segment bit reader with byte-stuffing removal.
struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    bits: u32,
    /// Set once a marker is reached; the segment is then exhausted.
    marker: Option<u8>,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader {
            data,
            pos,
            acc: 0,
            bits: 0,
            marker: None,
        }
    }

    fn fill(&mut self) -> Result<()> {
        while self.bits <= 24 {
            if self.marker.is_some() {
                return Ok(());
            }
            let b = *self
                .data
                .get(self.pos)
                .ok_or_else(|| malformed("entropy-coded data truncated"))?;
            if b == 0xFF {
                let next = *self
                    .data
                    .get(self.pos + 1)
                    .ok_or_else(|| malformed("entropy-coded data truncated"))?;
                if next == 0x00 {
                    self.pos += 2;
                } else if next == 0xFF {
                    // fill byte preceding a marker
                    self.pos += 1;
                    continue;
                } else {
                    self.marker = Some(next);
                    return Ok(());
                }
            } else {
                self.pos += 1;
            }
            self.acc |= (b as u32) << (24 - self.bits);
            self.bits += 8;
        }
        Ok(())
    }

    fn bit(&mut self) -> Result<u32> {
        if self.bits == 0 {
            self.fill()?;
            if self.bits == 0 {
                return Err(malformed("ran out of entropy-coded data"));
            }
        }
        let b = self.acc >> 31;
        self.acc <<= 1;
        self.bits -= 1;
        Ok(b)
    }

    fn receive(&mut self, n: u32) -> Result<i32> {
        let mut v = 0i32;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as i32;
        }
        Ok(v)
    }

    fn decode(&mut self, table: &HuffmanTable) -> Result<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | self.bit()? as i32;
            if code <= table.maxcode[len] {
                let idx = table.valptr[len] + code - table.mincode[len];
                return table
                    .values
                    .get(idx as usize)
                    .copied()
                    .ok_or_else(|| malformed("Huffman value index out of range"));
            }
        }
        Err(malformed("invalid Huffman code"))
    }

    /// Discards buffered bits and consumes an expected RSTn marker.
    fn restart(&mut self, expected: u8) -> Result<()> {
        self.acc = 0;
        self.bits = 0;
        if self.marker.is_none() {
            // scan forward to the marker
            while self.pos + 1 < self.data.len()
                && !(self.data[self.pos] == 0xFF && self.data[self.pos + 1] != 0)
            {
                self.pos += 1;
            }
            if self.pos + 1 >= self.data.len() {
                return Err(malformed("missing restart marker"));
            }
            self.marker = Some(self.data[self.pos + 1]);
        }
        if self.marker != Some(0xD0 + expected) {
            return Err(malformed("unexpected restart marker"));
        }
        self.pos += 2;
        self.marker = None;
        Ok(())
    }

    /// Byte offset of the marker that terminated the segment.
    fn marker_offset(&mut self) -> Result<usize> {
        if self.marker.is_none() {
            self.acc = 0;
            self.bits = 0;
            while self.pos < self.data.len() && self.data[self.pos] != 0xFF {
                self.pos += 1;
            }
            while self.pos + 1 < self.data.len() && self.data[self.pos + 1] == 0xFF {
                self.pos += 1;
            }
            if self.pos + 1 >= self.data.len() {
                return Err(malformed("stream ends inside entropy-coded data"));
            }
        }
        Ok(self.pos)
    }
}

fn extend(v: i32, n: u32) -> i32 {
    if n == 0 {
        0
    } else if v < (1 << (n - 1)) {
        v - (1 << n) + 1
    } else {
        v
    }
}

struct Frame {
    height: usize,
    width: usize,
    component_id: u8,
    quant_id: usize,
}

/// Parses a baseline-sequential single-component JPEG into its quantized
/// coefficients and quantization table.
pub fn parse_baseline_jpeg(bytes: &[u8]) -> Result<JpegImage> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.u16().map_err(|_| malformed("missing SOI"))? != 0xFFD8 {
        return Err(malformed("missing SOI"));
    }
    let mut qtables: [Option<[u16; 64]>; 4] = [None; 4];
    let mut dc_tables: [Option<HuffmanTable>; 4] = Default::default();
    let mut ac_tables: [Option<HuffmanTable>; 4] = Default::default();
    let mut frame: Option<Frame> = None;
    let mut coefs: Option<Vec<i32>> = None;
    let mut restart_interval = 0usize;

    loop {
        let m = r.marker()?;
        match m {
            0xD8 => return Err(malformed("repeated SOI")),
            0xD9 => break,
            0xC0 | 0xC1 => {
                let seg = r.segment()?;
                if seg.len() < 6 {
                    return Err(malformed("short SOF"));
                }
                if seg[0] != 8 {
                    return Err(unsupported(format!("{}-bit sample precision", seg[0])));
                }
                let height = u16::from_be_bytes([seg[1], seg[2]]) as usize;
                let width = u16::from_be_bytes([seg[3], seg[4]]) as usize;
                let ncomp = seg[5] as usize;
                if ncomp != 1 {
                    return Err(unsupported(format!("{ncomp} colour components")));
                }
                if seg.len() < 9 {
                    return Err(malformed("short SOF component list"));
                }
                if height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0 {
                    return Err(Error::UnsupportedGeometry(format!(
                        "{height}x{width} is not a positive multiple of 8"
                    )));
                }
                frame = Some(Frame {
                    height,
                    width,
                    component_id: seg[6],
                    quant_id: (seg[8] & 0x0F) as usize,
                });
            }
            0xC2 | 0xC3 | 0xC5..=0xC7 => {
                return Err(unsupported(format!("SOF{} frame", m - 0xC0)))
            }
            0xC9..=0xCB | 0xCD..=0xCF | 0xCC => {
                return Err(unsupported("arithmetic coding"))
            }
            0xC4 => {
                let seg = r.segment()?;
                let mut p = 0;
                while p < seg.len() {
                    if p + 17 > seg.len() {
                        return Err(malformed("short DHT"));
                    }
                    let class = seg[p] >> 4;
                    let id = (seg[p] & 0x0F) as usize;
                    if class > 1 || id > 3 {
                        return Err(malformed("bad DHT class or id"));
                    }
                    let mut counts = [0u8; 16];
                    counts.copy_from_slice(&seg[p + 1..p + 17]);
                    let n: usize = counts.iter().map(|&c| c as usize).sum();
                    p += 17;
                    if p + n > seg.len() {
                        return Err(malformed("short DHT values"));
                    }
                    let table = HuffmanTable::new(&counts, seg[p..p + n].to_vec())?;
                    p += n;
                    if class == 0 {
                        dc_tables[id] = Some(table);
                    } else {
                        ac_tables[id] = Some(table);
                    }
                }
            }
            0xDB => {
                let seg = r.segment()?;
                let mut p = 0;
                while p < seg.len() {
                    let precision = seg[p] >> 4;
                    let id = (seg[p] & 0x0F) as usize;
                    if id > 3 {
                        return Err(malformed("bad DQT id"));
                    }
                    p += 1;
                    let mut table = [0u16; 64];
                    for &natural in ZIGZAG.iter() {
                        let v = match precision {
                            0 => {
                                let v = *seg.get(p).ok_or_else(|| malformed("short DQT"))?;
                                p += 1;
                                v as u16
                            }
                            1 => {
                                if p + 2 > seg.len() {
                                    return Err(malformed("short DQT"));
                                }
                                let v = u16::from_be_bytes([seg[p], seg[p + 1]]);
                                p += 2;
                                v
                            }
                            _ => return Err(malformed("bad DQT precision")),
                        };
                        table[natural] = v;
                    }
                    qtables[id] = Some(table);
                }
            }
            0xDD => {
                let seg = r.segment()?;
                if seg.len() != 2 {
                    return Err(malformed("bad DRI length"));
                }
                restart_interval = u16::from_be_bytes([seg[0], seg[1]]) as usize;
            }
            0xDA => {
                let seg = r.segment()?;
                let f = frame.as_ref().ok_or_else(|| malformed("SOS before SOF"))?;
                if seg.is_empty() || seg[0] != 1 || seg.len() != 6 {
                    return Err(unsupported("scan with more than one component"));
                }
                if seg[1] != f.component_id {
                    return Err(malformed("scan references unknown component"));
                }
                let (ss, se, approx) = (seg[3], seg[4], seg[5]);
                if ss != 0 || se != 63 || approx != 0 {
                    return Err(unsupported("spectral selection or successive approximation"));
                }
                let dc = dc_tables[(seg[2] >> 4) as usize]
                    .clone()
                    .ok_or_else(|| malformed("missing DC Huffman table"))?;
                let ac = ac_tables[(seg[2] & 0x0F) as usize]
                    .clone()
                    .ok_or_else(|| malformed("missing AC Huffman table"))?;
                if coefs.is_some() {
                    return Err(unsupported("multiple scans"));
                }
                let mut bits = BitReader::new(bytes, r.pos);
                coefs = Some(decode_scan(&mut bits, f, &dc, &ac, restart_interval)?);
                r.pos = bits.marker_offset()?;
            }
            0xD0..=0xD7 => return Err(malformed("stray restart marker")),
            0x01 => {}
            _ => {
                // APPn, COM and anything else carrying a length
                r.segment()?;
            }
        }
    }

    let f = frame.ok_or_else(|| malformed("no frame header"))?;
    let coefs = coefs.ok_or_else(|| malformed("no scan data"))?;
    let table = qtables[f.quant_id].ok_or_else(|| malformed("missing quantization table"))?;
    JpegImage::new(
        Grid::from_vec(f.height, f.width, coefs)?,
        QuantTable::from_row_major(&table)?,
    )
}

fn decode_scan(
    bits: &mut BitReader<'_>,
    f: &Frame,
    dc: &HuffmanTable,
    ac: &HuffmanTable,
    restart_interval: usize,
) -> Result<Vec<i32>> {
    let (bh, bw) = (f.height / 8, f.width / 8);
    let mut out = vec![0i32; f.height * f.width];
    let mut pred = 0i32;
    let mut next_rst = 0u8;
    for n in 0..bh * bw {
        if restart_interval > 0 && n > 0 && n % restart_interval == 0 {
            bits.restart(next_rst)?;
            next_rst = (next_rst + 1) % 8;
            pred = 0;
        }
        let (a, b) = (n / bw, n % bw);
        let mut block = [0i32; 64];
        let t = bits.decode(dc)? as u32;
        if t > 11 {
            return Err(malformed("DC category out of range"));
        }
        pred += extend(bits.receive(t)?, t);
        block[0] = pred;
        let mut k = 1;
        while k < 64 {
            let rs = bits.decode(ac)?;
            let (run, size) = ((rs >> 4) as usize, (rs & 0x0F) as u32);
            if size == 0 {
                if run == 15 {
                    k += 16;
                    continue;
                }
                break;
            }
            k += run;
            if k > 63 {
                return Err(malformed("AC run past end of block"));
            }
            block[ZIGZAG[k]] = extend(bits.receive(size)?, size);
            k += 1;
        }
        if k > 64 {
            return Err(malformed("zero run past end of block"));
        }
        for i in 0..8 {
            for j in 0..8 {
                out[(8 * a + i) * f.width + 8 * b + j] = block[i * 8 + j];
            }
        }
    }
    Ok(out)
}
