//! `.jcoef` coefficient container: `"JCF1"`, `u32 H`, `u32 W`, 64 × `u16`
//! quantization steps (row-major), then `H·W` × `i16` coefficients, all
//! little-endian.

use super::{JpegImage, QuantTable};
use crate::error::{Error, Result};
use crate::grid::Grid;

const MAGIC: &[u8; 4] = b"JCF1";

pub fn write_jcoef(image: &JpegImage) -> Result<Vec<u8>> {
    let (h, w) = image.dims();
    let mut out = Vec::with_capacity(12 + 128 + 2 * h * w);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for s in image.table().to_row_major() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for &c in image.coefficients().iter() {
        let c = i16::try_from(c)
            .map_err(|_| Error::Format(format!("coefficient {c} does not fit in i16")))?;
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

pub fn read_jcoef(bytes: &[u8]) -> Result<JpegImage> {
    if bytes.len() < 12 + 128 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a JCF1 coefficient container".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let steps: Vec<u16> = bytes[12..140]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let body = &bytes[140..];
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} coefficient bytes, found {}",
            body.len()
        )));
    }
    let coefs = body
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
        .collect();
    JpegImage::new(Grid::from_vec(h, w, coefs)?, QuantTable::from_row_major(&steps)?)
}
