//! Network parameter container.
//!
//! ```text
//! offset  size   content
//! 0       4      magic "MRNP"
//! 4       1      format version (1)
//! 5       1      spatial dimension n
//! 6       1      kernel size
//! 7       1      encoder depth d
//! 8       1      decoder width count e
//! 9       8      leaky slope, f64
//! 17      4      feature multiplier, u32
//! 21      4*d    encoder widths, u32
//! ..      4*e    decoder widths, u32
//! ..      4      layer count L, u32
//! then L times:
//!         16     kernel, in channels, out channels, stride (u32 each)
//!         4      weight count W, then W f32 (tap-major, then input, then output channel)
//!         4      bias count B, then B f32
//! ```
//!
//! Everything is little-endian and nothing may follow the last layer. Layer
//! shapes must agree with the configuration they follow.

use std::path::Path;

use crate::data_io::bytes::{push_f32s, push_u32, ByteReader};
use crate::error::{Error, FormatKind, Result};
use crate::net::layers::ConvShape;
use crate::net::{ConvParams, NetConfig, NetParams};
use crate::real::Real;

pub const PARAMS_MAGIC: &[u8; 4] = b"MRNP";
pub const PARAMS_VERSION: u8 = 1;

pub fn encode_params<T: Real>(params: &NetParams<T>) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::with_capacity(64 + 4 * params.parameter_count());
    out.extend_from_slice(PARAMS_MAGIC);
    out.push(PARAMS_VERSION);
    out.push(c.ndim as u8);
    out.push(c.kernel_size as u8);
    out.push(c.encoder_filters.len() as u8);
    out.push(c.decoder_filters.len() as u8);
    out.extend_from_slice(&c.leaky_slope.to_le_bytes());
    push_u32(&mut out, c.feature_multiplier as u32);
    for &f in c.encoder_filters.iter().chain(&c.decoder_filters) {
        push_u32(&mut out, f as u32);
    }
    push_u32(&mut out, params.layers().len() as u32);
    for l in params.layers() {
        for v in [l.shape.kernel, l.shape.in_channels, l.shape.out_channels, l.shape.stride] {
            push_u32(&mut out, v as u32);
        }
        push_u32(&mut out, l.weight.len() as u32);
        push_f32s(&mut out, l.weight.iter().map(|w| w.as_f64() as f32));
        push_u32(&mut out, l.bias.len() as u32);
        push_f32s(&mut out, l.bias.iter().map(|b| b.as_f64() as f32));
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<NetParams<f32>> {
    let mut r = ByteReader::new(bytes, FormatKind::Params);
    if r.take(4)? != PARAMS_MAGIC {
        return Err(r.malformed_at(0, "bad magic, expected MRNP"));
    }
    let version = r.u8()?;
    if version != PARAMS_VERSION {
        return Err(Error::Unsupported { kind: FormatKind::Params, offset: 4, what: format!("version {version}") });
    }
    let ndim = r.u8()? as usize;
    let kernel_size = r.u8()? as usize;
    let depth = r.u8()? as usize;
    let n_dec = r.u8()? as usize;
    let leaky_slope = r.f64()?;
    let feature_multiplier = r.u32()? as usize;
    let mut encoder_filters = Vec::with_capacity(depth);
    for _ in 0..depth {
        encoder_filters.push(r.u32()? as usize);
    }
    let mut decoder_filters = Vec::with_capacity(n_dec);
    for _ in 0..n_dec {
        decoder_filters.push(r.u32()? as usize);
    }
    let config = NetConfig { ndim, encoder_filters, decoder_filters, kernel_size, leaky_slope, feature_multiplier };
    config.validate().map_err(|e| r.malformed_at(5, e.to_string()))?;
    let shapes = config.layer_shapes();

    let count_at = r.position();
    let count = r.u32()? as usize;
    if count != shapes.len() {
        return Err(r.malformed_at(count_at, format!("{count} layers, configuration implies {}", shapes.len())));
    }
    let mut layers = Vec::with_capacity(count);
    for (i, expected) in shapes.iter().enumerate() {
        let shape_at = r.position();
        let shape = ConvShape {
            kernel: r.u32()? as usize,
            in_channels: r.u32()? as usize,
            out_channels: r.u32()? as usize,
            stride: r.u32()? as usize,
        };
        if shape != *expected {
            return Err(r.malformed_at(shape_at, format!("layer {i} shape {shape:?}, expected {expected:?}")));
        }
        let len_at = r.position();
        let w = r.u32()? as usize;
        if w != shape.weight_len(ndim) {
            return Err(r.malformed_at(len_at, format!("layer {i} has {w} weights, expected {}", shape.weight_len(ndim))));
        }
        let weight = r.f32_vec(w)?;
        let len_at = r.position();
        let b = r.u32()? as usize;
        if b != shape.out_channels {
            return Err(r.malformed_at(len_at, format!("layer {i} has {b} biases, expected {}", shape.out_channels)));
        }
        let bias = r.f32_vec(b)?;
        layers.push(ConvParams { shape, weight, bias });
    }
    if r.remaining() != 0 {
        return Err(r.malformed(format!("{} bytes after the last layer", r.remaining())));
    }
    NetParams::from_layers(config, layers).map_err(|e| r.malformed_at(count_at, e.to_string()))
}

pub fn write_params<T: Real>(path: impl AsRef<Path>, params: &NetParams<T>) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<NetParams<f32>> {
    decode_params(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetParams<f32> {
        let config = NetConfig {
            ndim: 2,
            encoder_filters: vec![3, 4],
            decoder_filters: vec![4, 3, 2],
            kernel_size: 3,
            leaky_slope: 0.2,
            feature_multiplier: 1,
        };
        NetParams::init(config, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = small();
        let bytes = encode_params(&p);
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_params(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_params(&small());
        assert_eq!(&bytes[..4], b"MRNP");
        assert_eq!(&bytes[4..9], &[1, 2, 3, 2, 3]);
        assert_eq!(f64::from_le_bytes(bytes[9..17].try_into().unwrap()), 0.2);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let good = encode_params(&small());
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_params(&bad), Err(Error::Unsupported { offset: 4, .. })));
        let mut bad = good.clone();
        bad[21] = 5; // first encoder width no longer matches the first layer
        assert!(matches!(decode_params(&bad), Err(Error::MalformedHeader { .. })));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(decode_params(&bad), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_params(&small());
        for len in 0..bytes.len() {
            let err = decode_params(&bytes[..len]).unwrap_err();
            assert!(err.is_format_error(), "prefix {len}: {err}");
        }
    }
}
