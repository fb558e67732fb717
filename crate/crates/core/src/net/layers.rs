//! Layer kernels used by the registration network: "same" convolution with
//! stride 1 or 2, leaky rectifier, nearest-neighbour 2x upsampling and channel
//! concatenation. Each forward has a matching vector-Jacobian product.
//!
//! Convolution weights are laid out `[tap][in_channel][out_channel]`, where
//! taps enumerate the `k^n` kernel offsets in grid order (last axis fastest).

use crate::error::{Error, Result};
use crate::grid::{FeatureMap, GridGeometry};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn taps(&self, ndim: usize) -> usize {
        self.kernel.pow(ndim as u32)
    }

    pub fn weight_len(&self, ndim: usize) -> usize {
        self.taps(ndim) * self.in_channels * self.out_channels
    }

    pub fn output_geom(&self, input: GridGeometry) -> Result<GridGeometry> {
        match self.stride {
            1 => Ok(input),
            2 => input.downsampled(),
            s => Err(Error::Config(format!("unsupported stride {s}"))),
        }
    }
}

/// Offsets of every kernel tap, padded to three axes.
fn tap_offsets(kernel: usize, ndim: usize) -> Vec<[isize; 3]> {
    let r = (kernel / 2) as isize;
    let k = kernel as isize;
    let taps = kernel.pow(ndim as u32);
    (0..taps)
        .map(|t| {
            let mut off = [0isize; 3];
            let mut rest = t as isize;
            for d in (0..ndim).rev() {
                off[d] = rest % k - r;
                rest /= k;
            }
            off
        })
        .collect()
}

fn check_conv<T: Real>(input: &FeatureMap<T>, weight: &[T], bias: &[T], shape: &ConvShape) -> Result<GridGeometry> {
    let ndim = input.geom().ndim();
    if shape.kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel size must be odd, got {}", shape.kernel)));
    }
    if input.channels() != shape.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "convolution expects {} input channels, got {}",
            shape.in_channels,
            input.channels()
        )));
    }
    if weight.len() != shape.weight_len(ndim) || bias.len() != shape.out_channels {
        return Err(Error::ShapeMismatch(format!(
            "convolution parameters have {} weights and {} biases, expected {} and {}",
            weight.len(),
            bias.len(),
            shape.weight_len(ndim),
            shape.out_channels
        )));
    }
    shape.output_geom(input.geom())
}

/// Visits every (output voxel, tap, input voxel) triple with the input inside the grid.
#[inline]
fn for_each_tap(
    in_geom: GridGeometry,
    out_geom: GridGeometry,
    stride: usize,
    offsets: &[[isize; 3]],
    mut visit: impl FnMut(usize, usize, usize),
) {
    let ndim = in_geom.ndim();
    let dims = in_geom.dims3();
    let strides = in_geom.strides3();
    for ov in 0..out_geom.voxel_count() {
        let oc = out_geom.coord3(ov);
        'tap: for (t, off) in offsets.iter().enumerate() {
            let mut iv = 0usize;
            for d in 0..ndim {
                let c = (oc[d] * stride) as isize + off[d];
                if c < 0 || c >= dims[d] as isize {
                    continue 'tap;
                }
                iv += c as usize * strides[d];
            }
            visit(ov, t, iv);
        }
    }
}

/// Zero-padded cross-correlation; stride 2 samples every other input voxel.
pub fn conv_forward<T: Real>(input: &FeatureMap<T>, weight: &[T], bias: &[T], shape: &ConvShape) -> Result<FeatureMap<T>> {
    let out_geom = check_conv(input, weight, bias, shape)?;
    let (ci, co) = (shape.in_channels, shape.out_channels);
    let offsets = tap_offsets(shape.kernel, input.geom().ndim());
    let mut out = Vec::with_capacity(out_geom.voxel_count() * co);
    for _ in 0..out_geom.voxel_count() {
        out.extend_from_slice(bias);
    }
    let x = input.data();
    for_each_tap(input.geom(), out_geom, shape.stride, &offsets, |ov, t, iv| {
        let row = &mut out[ov * co..(ov + 1) * co];
        let xs = &x[iv * ci..(iv + 1) * ci];
        let w_tap = &weight[t * ci * co..(t + 1) * ci * co];
        for (i, &xv) in xs.iter().enumerate() {
            let w = &w_tap[i * co..(i + 1) * co];
            for (o, &wv) in row.iter_mut().zip(w) {
                *o += xv * wv;
            }
        }
    });
    Ok(FeatureMap::from_raw(out_geom, co, out))
}

pub struct ConvGrads<T> {
    pub input: Option<FeatureMap<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Vector-Jacobian product of [`conv_forward`]; the input gradient is skipped when not needed.
pub fn conv_backward<T: Real>(
    input: &FeatureMap<T>,
    weight: &[T],
    bias: &[T],
    shape: &ConvShape,
    upstream: &FeatureMap<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let out_geom = check_conv(input, weight, bias, shape)?;
    if upstream.geom() != out_geom || upstream.channels() != shape.out_channels {
        return Err(Error::ShapeMismatch("convolution cotangent has the wrong shape".into()));
    }
    let (ci, co) = (shape.in_channels, shape.out_channels);
    let offsets = tap_offsets(shape.kernel, input.geom().ndim());
    let x = input.data();
    let g = upstream.data();
    let mut g_w = vec![T::zero(); weight.len()];
    let mut g_b = vec![T::zero(); co];
    for row in g.chunks_exact(co) {
        for (b, &v) in g_b.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut g_x = if need_input { vec![T::zero(); x.len()] } else { Vec::new() };
    for_each_tap(input.geom(), out_geom, shape.stride, &offsets, |ov, t, iv| {
        let gr = &g[ov * co..(ov + 1) * co];
        let base = t * ci * co;
        for i in 0..ci {
            let xv = x[iv * ci + i];
            let w = &weight[base + i * co..base + (i + 1) * co];
            let gw = &mut g_w[base + i * co..base + (i + 1) * co];
            let mut dot = T::zero();
            for o in 0..co {
                gw[o] += xv * gr[o];
                dot += w[o] * gr[o];
            }
            if need_input {
                g_x[iv * ci + i] += dot;
            }
        }
    });
    Ok(ConvGrads {
        input: need_input.then(|| FeatureMap::from_raw(input.geom(), ci, g_x)),
        weight: g_w,
        bias: g_b,
    })
}

pub fn leaky_relu<T: Real>(input: &FeatureMap<T>, slope: T) -> FeatureMap<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect();
    FeatureMap::from_raw(input.geom(), input.channels(), data)
}

/// Derivative is 1 for positive inputs and `slope` otherwise (including 0).
pub fn leaky_relu_backward<T: Real>(input: &FeatureMap<T>, slope: T, upstream: &FeatureMap<T>) -> FeatureMap<T> {
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
        .collect();
    FeatureMap::from_raw(input.geom(), input.channels(), data)
}

/// Nearest-neighbour upsampling by 2 along every axis.
pub fn upsample2x<T: Real>(input: &FeatureMap<T>) -> FeatureMap<T> {
    let in_geom = input.geom();
    let out_geom = in_geom.upsampled();
    let ch = input.channels();
    let strides = in_geom.strides3();
    let mut out = Vec::with_capacity(out_geom.voxel_count() * ch);
    for ov in 0..out_geom.voxel_count() {
        let c = out_geom.coord3(ov);
        // unused trailing axes have coordinate 0
        let iv = (c[0] / 2) * strides[0] + (c[1] / 2) * strides[1] + (c[2] / 2) * strides[2];
        out.extend_from_slice(&input.data()[iv * ch..(iv + 1) * ch]);
    }
    FeatureMap::from_raw(out_geom, ch, out)
}

/// Each coarse cell receives the sum of its `2^n` replicas' cotangents.
pub fn upsample2x_backward<T: Real>(input_geom: GridGeometry, upstream: &FeatureMap<T>) -> FeatureMap<T> {
    let ch = upstream.channels();
    let out_geom = upstream.geom();
    let strides = input_geom.strides3();
    let mut g = vec![T::zero(); input_geom.voxel_count() * ch];
    for ov in 0..out_geom.voxel_count() {
        let c = out_geom.coord3(ov);
        let iv = (c[0] / 2) * strides[0] + (c[1] / 2) * strides[1] + (c[2] / 2) * strides[2];
        for k in 0..ch {
            g[iv * ch + k] += upstream.data()[ov * ch + k];
        }
    }
    FeatureMap::from_raw(input_geom, ch, g)
}

pub fn concat<T: Real>(parts: &[&FeatureMap<T>]) -> Result<FeatureMap<T>> {
    let first = parts.first().ok_or_else(|| Error::ShapeMismatch("nothing to concatenate".into()))?;
    let geom = first.geom();
    if let Some(bad) = parts.iter().find(|p| p.geom() != geom) {
        return Err(Error::GeometryMismatch { left: geom.dims().to_vec(), right: bad.geom().dims().to_vec() });
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut out = Vec::with_capacity(geom.voxel_count() * total);
    for v in 0..geom.voxel_count() {
        for p in parts {
            let c = p.channels();
            out.extend_from_slice(&p.data()[v * c..(v + 1) * c]);
        }
    }
    Ok(FeatureMap::from_raw(geom, total, out))
}

/// Splits a concatenated cotangent back into per-part cotangents.
pub fn concat_backward<T: Real>(channels: &[usize], upstream: &FeatureMap<T>) -> Vec<FeatureMap<T>> {
    let geom = upstream.geom();
    let total = upstream.channels();
    let mut outs: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(geom.voxel_count() * c)).collect();
    for row in upstream.data().chunks_exact(total) {
        let mut start = 0;
        for (out, &c) in outs.iter_mut().zip(channels) {
            out.extend_from_slice(&row[start..start + c]);
            start += c;
        }
    }
    outs.into_iter().zip(channels).map(|(d, &c)| FeatureMap::from_raw(geom, c, d)).collect()
}
