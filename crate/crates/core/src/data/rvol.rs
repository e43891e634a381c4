//! RVOL: `"RVOL1"`, one dtype byte, three little-endian `u32` extents
//! `(x, y, z)`, then the raw little-endian payload.

use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};

pub const RVOL_MAGIC: &[u8; 5] = b"RVOL1";
pub const RVOL_DTYPE_F32: u8 = 0x01;
const HEADER_LEN: usize = 5 + 1 + 12;

pub fn encode_rvol(volume: &Volume<f32>) -> Result<Vec<u8>> {
    let dims = volume.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * volume.len());
    out.extend_from_slice(RVOL_MAGIC);
    out.push(RVOL_DTYPE_F32);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow { extents: dims.iter().map(|&d| d as u64).collect() })?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_rvol(bytes: &[u8]) -> Result<Volume<f32>> {
    if bytes.len() < RVOL_MAGIC.len() || &bytes[..5] != RVOL_MAGIC {
        return Err(Error::BadMagic { format: "RVOL" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    if bytes[5] != RVOL_DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[5]));
    }
    let extents: Vec<u64> =
        (0..3).map(|i| u64::from(u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()))).collect();
    let overflow = || Error::DimOverflow { extents: extents.clone() };
    let count = extents.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d)).ok_or_else(overflow)?;
    let payload = count.checked_mul(4).ok_or_else(overflow)?;
    let count = usize::try_from(count).map_err(|_| overflow())?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found != payload {
        return Err(Error::TruncatedPayload { expected: payload, found });
    }
    let data = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let dims = [extents[0] as usize, extents[1] as usize, extents[2] as usize];
    debug_assert_eq!(dims.iter().product::<usize>(), count);
    Volume::new(dims, data)
}

pub fn write_rvol(volume: &Volume<f32>, path: &Path) -> Result<()> {
    let bytes = encode_rvol(volume)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rvol(path: &Path) -> Result<Volume<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rvol(&bytes)
}
