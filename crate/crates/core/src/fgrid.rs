//! FGRID binary raster format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FGRD" | u32 version (=1) | u32 width | u32 height | u32 channels | u8 mask_flag
//! f32 samples, channel-planar then row-major ([channel][row][column])
//! if mask_flag == 1: width*height bytes, 1 = valid, 0 = masked
//! ```
//!
//! The declared value range is not stored; readers recover it from the
//! valid samples.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"FGRD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

/// Number of bytes [`encode`] produces for the given grid.
pub fn encoded_len<T: Scalar>(grid: &Grid2D<T>) -> usize {
    HEADER_LEN + grid.values().len() * 4 + grid.mask().map_or(0, |m| m.len())
}

pub fn encode<T: Scalar>(grid: &Grid2D<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(grid));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [grid.width(), grid.height(), grid.channels()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.push(grid.mask().is_some() as u8);
    for v in grid.values() {
        out.extend_from_slice(&v.f32().to_le_bytes());
    }
    if let Some(mask) = grid.mask() {
        out.extend(mask.iter().map(|&m| m as u8));
    }
    out
}

/// Decodes one grid from the start of `bytes`, returning it and the bytes consumed.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Grid2D<T>, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::data("truncated FGRID header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::data("bad FGRID magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::data(format!("unsupported FGRID version {version}")));
    }
    let (w, h, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let mask_flag = bytes[HEADER_LEN - 1];
    if mask_flag > 1 {
        return Err(Error::data(format!("bad FGRID mask flag {mask_flag}")));
    }
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::data("FGRID dimensions overflow"))?;
    let body = n * 4;
    let mask_len = if mask_flag == 1 { w * h } else { 0 };
    let total = HEADER_LEN + body + mask_len;
    if bytes.len() < total {
        return Err(Error::data(format!("truncated FGRID payload: need {total} bytes, have {}", bytes.len())));
    }
    let values: Vec<T> = bytes[HEADER_LEN..HEADER_LEN + body]
        .chunks_exact(4)
        .map(|b| T::c(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    let mut grid = Grid2D::new(w, h, c, values, (T::zero(), T::zero())).map_err(|e| Error::data(e.to_string()))?;
    if mask_flag == 1 {
        let raw = &bytes[HEADER_LEN + body..total];
        if raw.iter().any(|&b| b > 1) {
            return Err(Error::data("bad FGRID mask byte"));
        }
        let mask: Vec<bool> = raw.iter().map(|&b| b == 1).collect();
        grid = grid.with_mask(mask)?;
    }
    let range = grid.observed_range().unwrap_or((T::zero(), T::zero()));
    grid.set_value_range_unchecked(range.0, range.1);
    Ok((grid, total))
}

pub fn write_to<T: Scalar>(mut w: impl Write, grid: &Grid2D<T>) -> std::io::Result<()> {
    w.write_all(&encode(grid))
}

pub fn read_from<T: Scalar>(mut r: impl Read) -> Result<Grid2D<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("<reader>", e))?;
    let (grid, used) = decode(&buf)?;
    if used != buf.len() {
        return Err(Error::data("trailing bytes after FGRID payload"));
    }
    Ok(grid)
}

pub fn save<T: Scalar>(path: &Path, grid: &Grid2D<T>) -> Result<()> {
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Grid2D<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (grid, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::data(format!("{}: trailing bytes after FGRID payload", path.display())));
    }
    Ok(grid)
}
