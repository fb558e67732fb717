//! Binary greyscale PGM (`P5`) images, 8- or 16-bit.
//!
//! Row `r`, column `c` maps to grid coordinate `(r, c)`, so raster order is the
//! grid order. Samples are rescaled to `[0, 1]` by `maxval` on read. 16-bit
//! samples are big-endian as the PGM format requires.

use std::path::Path;

use crate::error::{Error, FormatKind, Result};
use crate::grid::{GridGeometry, GridImage};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

struct HeaderCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn err(&self, detail: &str) -> Error {
        if self.pos >= self.buf.len() {
            Error::Truncated { kind: FormatKind::Pgm, offset: self.pos as u64, expected: 1, found: 0 }
        } else {
            Error::MalformedHeader { kind: FormatKind::Pgm, offset: self.pos as u64, detail: detail.into() }
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(&format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader { kind: FormatKind::Pgm, offset: start as u64, detail: format!("{what} out of range") })
    }
}

pub fn decode_pgm<T: Real>(bytes: &[u8]) -> Result<GridImage<T>> {
    let mut cur = HeaderCursor { buf: bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(Error::Truncated { kind: FormatKind::Pgm, offset: 0, expected: 2, found: bytes.len() as u64 });
    }
    if &bytes[..2] != b"P5" {
        return Err(Error::MalformedHeader { kind: FormatKind::Pgm, offset: 0, detail: "expected magic P5".into() });
    }
    cur.pos = 2;
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Unsupported { kind: FormatKind::Pgm, offset: maxval_at as u64, what: format!("maxval {maxval}") });
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() {
        return Err(cur.err("missing raster"));
    }
    if !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.err("expected whitespace after maxval"));
    }
    cur.pos += 1;
    let geom = GridGeometry::new(&[height, width])
        .map_err(|e| Error::MalformedHeader { kind: FormatKind::Pgm, offset: 2, detail: e.to_string() })?;
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = geom.voxel_count() * sample;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::Truncated {
            kind: FormatKind::Pgm,
            offset: cur.pos as u64,
            expected: need as u64,
            found: raster.len() as u64,
        });
    }
    let scale = 1.0 / maxval as f64;
    let values = raster[..need]
        .chunks_exact(sample)
        .map(|s| {
            let v = if sample == 1 { s[0] as u32 } else { u16::from_be_bytes([s[0], s[1]]) as u32 };
            T::lit(v.min(maxval) as f64 * scale)
        })
        .collect();
    GridImage::new(geom, values)
}

/// Values are clamped to `[0, 1]` and quantized to the chosen depth.
pub fn encode_pgm<T: Real>(img: &GridImage<T>, depth: PgmDepth) -> Result<Vec<u8>> {
    let g = img.geom();
    if g.ndim() != 2 {
        return Err(Error::Config("PGM holds 2D images only".into()));
    }
    let (rows, cols) = (g.dims()[0], g.dims()[1]);
    let maxval = depth.maxval();
    let mut out = format!("P5\n{cols} {rows}\n{maxval}\n").into_bytes();
    for &v in img.values() {
        let q = (v.as_f64().clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    Ok(out)
}

/// Linearly maps `[min, max]` of the image to `[0, 1]` before encoding (for viewing fields).
pub fn encode_pgm_normalized<T: Real>(img: &GridImage<T>, depth: PgmDepth) -> Result<Vec<u8>> {
    let (lo, hi) = img.min_max();
    let span = (hi - lo).as_f64();
    let values = img
        .values()
        .iter()
        .map(|&v| if span > 0.0 { (v - lo).as_f64() / span } else { 0.5 })
        .collect();
    encode_pgm(&GridImage::<f64>::new(img.geom(), values)?, depth)
}

pub fn read_pgm<T: Real>(path: impl AsRef<Path>) -> Result<GridImage<T>> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm<T: Real>(path: impl AsRef<Path>, img: &GridImage<T>, depth: PgmDepth) -> Result<()> {
    std::fs::write(path, encode_pgm(img, depth)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxval_255_maps_to_one() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51, 255]);
        let img: GridImage<f64> = decode_pgm(&bytes).unwrap();
        assert_eq!(img.values(), &[1.0, 0.0, 0.2, 1.0]);
        assert_eq!(img.geom().dims(), &[2, 2]);
    }

    #[test]
    fn comments_and_16_bit() {
        let mut bytes = b"P5 # a comment\n3 # width\n2\n65535\n".to_vec();
        for v in [0u16, 65535, 256, 1, 2, 3] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img: GridImage<f64> = decode_pgm(&bytes).unwrap();
        assert_eq!(img.geom().dims(), &[2, 3]);
        assert_eq!(img.values()[1], 1.0);
        assert_eq!(img.values()[2], 256.0 / 65535.0);
    }

    #[test]
    fn quantized_round_trip_is_stable() {
        let g = GridGeometry::new(&[3, 5]).unwrap();
        let img = GridImage::from_fn(g, |c| (c[0] * 5 + c[1]) as f64 / 14.0).unwrap();
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            let bytes = encode_pgm(&img, depth).unwrap();
            let back: GridImage<f64> = decode_pgm(&bytes).unwrap();
            for (a, b) in img.values().iter().zip(back.values()) {
                assert!((a - b).abs() <= 0.5 / depth.maxval() as f64 + 1e-12);
            }
            assert_eq!(encode_pgm(&back, depth).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_maxval() {
        assert!(matches!(decode_pgm::<f32>(b"P2\n1 1\n255\n\x00"), Err(Error::MalformedHeader { offset: 0, .. })));
        assert!(matches!(decode_pgm::<f32>(b"P5\n2 2\n70000\n"), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let g = GridGeometry::new(&[4, 3]).unwrap();
        let img = GridImage::from_fn(g, |c| (c[0] + c[1]) as f64 / 6.0).unwrap();
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            let bytes = encode_pgm(&img, depth).unwrap();
            for len in 0..bytes.len() {
                let err = decode_pgm::<f32>(&bytes[..len]).unwrap_err();
                assert!(err.is_format_error(), "prefix {len}: {err}");
            }
        }
    }
}
