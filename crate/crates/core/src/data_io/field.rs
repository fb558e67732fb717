//! Displacement-field container.
//!
//! ```text
//! offset  size        content
//! 0       4           magic "DFLD"
//! 4       1           format version (1)
//! 5       1           n, number of spatial axes (2 or 3)
//! 6       4 * n       extents, u32, axis 0 first
//! 6+4n    4 * N * n   components as f32, voxel-major in grid order
//!                     (last axis fastest), n components per voxel
//! ```
//!
//! All integers and floats are little-endian. Nothing may follow the payload.

use std::path::Path;

use crate::data_io::bytes::{push_f32s, push_u32, ByteReader};
use crate::error::{Error, FormatKind, Result};
use crate::grid::{DisplacementField, GridGeometry};
use crate::real::Real;

pub const FIELD_MAGIC: &[u8; 4] = b"DFLD";
pub const FIELD_VERSION: u8 = 1;

pub fn encode_field<T: Real>(u: &DisplacementField<T>) -> Vec<u8> {
    let g = u.geom();
    let mut out = Vec::with_capacity(6 + 4 * g.ndim() + 4 * u.vectors().len());
    out.extend_from_slice(FIELD_MAGIC);
    out.push(FIELD_VERSION);
    out.push(g.ndim() as u8);
    for &d in g.dims() {
        push_u32(&mut out, d as u32);
    }
    push_f32s(&mut out, u.vectors().iter().map(|v| v.as_f64() as f32));
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<DisplacementField<f32>> {
    let mut r = ByteReader::new(bytes, FormatKind::Field);
    if r.take(4)? != FIELD_MAGIC {
        return Err(r.malformed_at(0, "bad magic, expected DFLD"));
    }
    let version = r.u8()?;
    if version != FIELD_VERSION {
        return Err(Error::Unsupported { kind: FormatKind::Field, offset: 4, what: format!("version {version}") });
    }
    let ndim = r.u8()? as usize;
    if ndim != 2 && ndim != 3 {
        return Err(Error::Unsupported { kind: FormatKind::Field, offset: 5, what: format!("dimension {ndim}") });
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u32()? as usize);
    }
    let geom = GridGeometry::new(&dims).map_err(|e| r.malformed_at(6, e.to_string()))?;
    let count = geom.voxel_count().checked_mul(ndim).ok_or_else(|| r.malformed_at(6, "extent overflow"))?;
    let payload_at = r.position();
    let values = r.f32_vec(count)?;
    if r.remaining() != 0 {
        return Err(r.malformed(format!("{} bytes after the payload", r.remaining())));
    }
    DisplacementField::new(geom, values).map_err(|e| r.malformed_at(payload_at, e.to_string()))
}

pub fn write_field<T: Real>(path: impl AsRef<Path>, u: &DisplacementField<T>) -> Result<()> {
    std::fs::write(path, encode_field(u))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField<f32>> {
    decode_field(&std::fs::read(path)?)
}
