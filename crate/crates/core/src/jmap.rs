//! `.jmap` map container: `"JMP1"`, `u32 H`, `u32 W`, `u8` channel count,
//! then `H·W·C` little-endian `f32` values, row-major with channels fastest.

use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};

const MAGIC: &[u8; 4] = b"JMP1";
const HEADER: usize = 13;

pub fn write_jmap(map: &Volume) -> Result<Vec<u8>> {
    let channels = u8::try_from(map.channels())
        .map_err(|_| Error::Format(format!("{} channels do not fit in u8", map.channels())))?;
    let mut out = Vec::with_capacity(HEADER + 4 * map.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.push(channels);
    for &v in map.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_jmap(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a JMP1 map container".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let c = bytes[12] as usize;
    let body = &bytes[HEADER..];
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} value bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Volume::from_vec(h, w, c, data)
}

/// Single-channel convenience wrapper.
pub fn write_grid(map: &Grid<f64>) -> Result<Vec<u8>> {
    write_jmap(&Volume::from_grid(map))
}

pub fn read_grid(bytes: &[u8]) -> Result<Grid<f64>> {
    let v = read_jmap(bytes)?;
    if v.channels() != 1 {
        return Err(Error::Format(format!(
            "expected a 1-channel map, found {} channels",
            v.channels()
        )));
    }
    Ok(v.channel(0))
}
