//! Bounds-checked little-endian cursor shared by the binary readers.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, FormatKind, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: FormatKind,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], kind: FormatKind) -> Self {
        ByteReader { buf, pos: 0, kind }
    }

    pub fn position(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                kind: self.kind,
                offset: self.pos as u64,
                expected: n as u64,
                found: self.remaining() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.malformed("length overflow"))?)?;
        let mut out = vec![0f32; n];
        LittleEndian::read_f32_into(bytes, &mut out);
        Ok(out)
    }

    pub fn malformed(&self, detail: impl Into<String>) -> Error {
        Error::MalformedHeader { kind: self.kind, offset: self.pos as u64, detail: detail.into() }
    }

    pub fn malformed_at(&self, offset: u64, detail: impl Into<String>) -> Error {
        Error::MalformedHeader { kind: self.kind, offset, detail: detail.into() }
    }
}

pub(crate) fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
