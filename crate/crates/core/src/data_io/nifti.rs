//! Minimal single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Supported: little-endian, uncompressed, one frame, 2 or 3 spatial axes, datatypes
//! uint8 (2), int16 (4) and float32 (16). Orientation and all other header fields are
//! kept verbatim but never interpreted. NIfTI stores x fastest, so NIfTI axis `i`
//! is grid axis `ndim - 1 - i`.
//!
//! Integer data is scaled by `scl_slope`/`scl_inter` when the slope is non-zero, as
//! the format prescribes. Writing integer types rounds to nearest and saturates.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, FormatKind, Result};
use crate::grid::{GridGeometry, GridImage};
use crate::real::Real;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(NiftiDatatype::Uint8),
            4 => Some(NiftiDatatype::Int16),
            16 => Some(NiftiDatatype::Float32),
            _ => None,
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Float32 => 4,
        }
    }
}

/// An image together with the header it was read from (or a fresh default one).
#[derive(Debug, Clone)]
pub struct NiftiVolume {
    header: Box<[u8; HEADER_SIZE]>,
    datatype: NiftiDatatype,
    image: GridImage<f32>,
}

fn default_header() -> Box<[u8; HEADER_SIZE]> {
    let mut h = Box::new([0u8; HEADER_SIZE]);
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r'; // regular = 'r', historical
    for i in 0..8 {
        LittleEndian::write_f32(&mut h[OFF_PIXDIM + 4 * i..], 1.0);
    }
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
    h
}

impl NiftiVolume {
    pub fn new(image: GridImage<f32>, datatype: NiftiDatatype) -> Self {
        NiftiVolume { header: default_header(), datatype, image }
    }

    pub fn image(&self) -> &GridImage<f32> {
        &self.image
    }

    pub fn into_image(self) -> GridImage<f32> {
        self.image
    }

    pub fn datatype(&self) -> NiftiDatatype {
        self.datatype
    }

    pub fn header_bytes(&self) -> &[u8; HEADER_SIZE] {
        &self.header
    }

    /// Keeps the header but swaps the image (geometry fields are rewritten on encode).
    pub fn with_image(&self, image: GridImage<f32>) -> Self {
        NiftiVolume { header: self.header.clone(), datatype: self.datatype, image }
    }
}

fn truncated(offset: usize, expected: usize, found: usize) -> Error {
    Error::Truncated { kind: FormatKind::Nifti, offset: offset as u64, expected: expected as u64, found: found as u64 }
}

fn malformed(offset: usize, detail: impl Into<String>) -> Error {
    Error::MalformedHeader { kind: FormatKind::Nifti, offset: offset as u64, detail: detail.into() }
}

fn unsupported(offset: usize, what: impl Into<String>) -> Error {
    Error::Unsupported { kind: FormatKind::Nifti, offset: offset as u64, what: what.into() }
}

pub fn decode_nifti(bytes: &[u8]) -> Result<NiftiVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(truncated(0, HEADER_SIZE, bytes.len()));
    }
    let sizeof_hdr = LittleEndian::read_i32(&bytes[0..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if byteorder::BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
            return Err(unsupported(0, "big-endian byte order"));
        }
        return Err(malformed(0, format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    match &bytes[OFF_MAGIC..OFF_MAGIC + 4] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(unsupported(OFF_MAGIC, "two-file (.hdr/.img) storage")),
        _ => return Err(malformed(OFF_MAGIC, "bad magic, expected \"n+1\"")),
    }

    let mut dim = [0i16; 8];
    LittleEndian::read_i16_into(&bytes[OFF_DIM..OFF_DIM + 16], &mut dim);
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(malformed(OFF_DIM, format!("dim[0] = {rank}")));
    }
    let rank = rank as usize;
    if let Some(i) = (1..=rank).find(|&i| dim[i] < 1) {
        return Err(malformed(OFF_DIM + 2 * i, format!("dim[{i}] = {}", dim[i])));
    }
    if (4..=rank).any(|i| dim[i] != 1) {
        return Err(unsupported(OFF_DIM + 8, "more than one frame"));
    }
    // trailing singleton spatial axes (e.g. a 2D slice stored as x*y*1) are dropped
    let mut spatial: Vec<usize> = (1..=rank.min(3)).map(|i| dim[i] as usize).collect();
    while spatial.len() > 2 && spatial.last() == Some(&1) {
        spatial.pop();
    }
    spatial.reverse();
    let geom = GridGeometry::new(&spatial).map_err(|e| unsupported(OFF_DIM, e.to_string()))?;

    let code = LittleEndian::read_i16(&bytes[OFF_DATATYPE..]);
    let datatype = NiftiDatatype::from_code(code).ok_or_else(|| unsupported(OFF_DATATYPE, format!("datatype {code}")))?;
    let bitpix = LittleEndian::read_i16(&bytes[OFF_BITPIX..]);
    if bitpix as usize != 8 * datatype.bytes() {
        return Err(malformed(OFF_BITPIX, format!("bitpix {bitpix} does not match datatype {code}")));
    }
    let vox_offset = LittleEndian::read_f32(&bytes[OFF_VOX_OFFSET..]);
    if !(vox_offset >= DATA_OFFSET as f32) || vox_offset.fract() != 0.0 || vox_offset > 1e9 {
        return Err(malformed(OFF_VOX_OFFSET, format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let need = geom.voxel_count() * datatype.bytes();
    let have = bytes.len().saturating_sub(start);
    if have < need {
        return Err(truncated(start.min(bytes.len()), need, have));
    }
    let raw = &bytes[start..start + need];

    let slope = LittleEndian::read_f32(&bytes[OFF_SCL_SLOPE..]);
    let inter = LittleEndian::read_f32(&bytes[OFF_SCL_INTER..]);
    let scaled = datatype != NiftiDatatype::Float32 && slope != 0.0 && slope.is_finite() && inter.is_finite();
    let values: Vec<f32> = match datatype {
        NiftiDatatype::Float32 => {
            let mut v = vec![0f32; geom.voxel_count()];
            LittleEndian::read_f32_into(raw, &mut v);
            v
        }
        NiftiDatatype::Uint8 => raw.iter().map(|&b| b as f32).collect(),
        NiftiDatatype::Int16 => raw.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f32).collect(),
    };
    let values = if scaled { values.into_iter().map(|v| v * slope + inter).collect() } else { values };
    let image = GridImage::new(geom, values).map_err(|e| match e {
        Error::NonFiniteValue { index } => malformed(start + index * datatype.bytes(), "non-finite voxel value"),
        other => other,
    })?;

    let mut header = Box::new([0u8; HEADER_SIZE]);
    header.copy_from_slice(&bytes[..HEADER_SIZE]);
    Ok(NiftiVolume { header, datatype, image })
}

pub fn encode_nifti(vol: &NiftiVolume) -> Vec<u8> {
    let mut h = vol.header.clone();
    let g = vol.image.geom();
    let mut dim = [1i16; 8];
    dim[0] = g.ndim() as i16;
    for (i, &d) in g.dims().iter().rev().enumerate() {
        dim[i + 1] = d as i16;
    }
    LittleEndian::write_i16_into(&dim, &mut h[OFF_DIM..OFF_DIM + 16]);
    LittleEndian::write_i16(&mut h[OFF_DATATYPE..], vol.datatype.code());
    LittleEndian::write_i16(&mut h[OFF_BITPIX..], 8 * vol.datatype.bytes() as i16);
    LittleEndian::write_f32(&mut h[OFF_VOX_OFFSET..], DATA_OFFSET as f32);
    // stored values are the image values, so no scaling on the way back in
    LittleEndian::write_f32(&mut h[OFF_SCL_SLOPE..], 0.0);
    LittleEndian::write_f32(&mut h[OFF_SCL_INTER..], 0.0);

    let mut out = Vec::with_capacity(DATA_OFFSET + g.voxel_count() * vol.datatype.bytes());
    out.extend_from_slice(&h[..]);
    out.extend_from_slice(&[0u8; 4]);
    for &v in vol.image.values() {
        match vol.datatype {
            NiftiDatatype::Float32 => out.extend_from_slice(&v.to_le_bytes()),
            NiftiDatatype::Uint8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            NiftiDatatype::Int16 => {
                out.extend_from_slice(&(v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16).to_le_bytes())
            }
        }
    }
    out
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    decode_nifti(&std::fs::read(path)?)
}

pub fn write_nifti(path: impl AsRef<Path>, vol: &NiftiVolume) -> Result<()> {
    std::fs::write(path, encode_nifti(vol))?;
    Ok(())
}

/// Convenience: a float32 volume with a default header.
pub fn write_nifti_image<T: Real>(path: impl AsRef<Path>, img: &GridImage<T>) -> Result<()> {
    write_nifti(path, &NiftiVolume::new(img.cast(), NiftiDatatype::Float32))
}
