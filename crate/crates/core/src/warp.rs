//! Spatial transformation `m ∘ (Id + u)` by n-linear interpolation.
//!
//! Each voxel `p` samples the moving map at `p' = p + u(p)`. Sample
//! coordinates are clamped to the grid box `[0, extent - 1]` on every axis, so
//! the warp is defined for any displacement. Interpolation weights on an axis
//! are `1 - |p'_d - q_d|` for the two bracketing grid points.
//!
//! Derivative conventions for the displacement gradient:
//! - on an axis where the sample was clamped, the derivative is zero;
//! - at an integer sample coordinate the right derivative is used, i.e. the
//!   forward difference between the two bracketing grid points (at the upper
//!   grid edge the bracket is the last cell, giving the left derivative).

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, FeatureMap, GridImage, SegmentationMap};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
struct AxisSample<T> {
    lo: usize,
    frac: T,
    clamped: bool,
}

#[inline]
fn axis_sample<T: Real>(pos: T, extent: usize) -> AxisSample<T> {
    let max = T::from_usize(extent - 1);
    if pos < T::zero() {
        AxisSample { lo: 0, frac: T::zero(), clamped: true }
    } else if pos > max {
        AxisSample { lo: extent - 2, frac: T::one(), clamped: true }
    } else {
        // extent >= 2 is a geometry invariant, so extent - 2 is a valid cell.
        let lo = pos.floor().to_usize().unwrap_or(0).min(extent - 2);
        AxisSample { lo, frac: pos - T::from_usize(lo), clamped: false }
    }
}

/// Bracketing cell of one output voxel: corner offsets and per-axis samples.
struct Cell<T> {
    base: usize,
    axes: [AxisSample<T>; 3],
}

struct Sampler {
    ndim: usize,
    dims: [usize; 3],
    strides: [usize; 3],
}

impl Sampler {
    fn new<T: Real>(u: &DisplacementField<T>) -> Self {
        let g = u.geom();
        Sampler { ndim: g.ndim(), dims: g.dims3(), strides: g.strides3() }
    }

    #[inline]
    fn cell<T: Real>(&self, voxel: usize, disp: &[T]) -> Cell<T> {
        let coord = [
            voxel / self.strides[0],
            (voxel / self.strides[1]) % self.dims[1],
            voxel % self.dims[2],
        ];
        let mut axes = [AxisSample { lo: 0, frac: T::zero(), clamped: false }; 3];
        let mut base = 0;
        for d in 0..self.ndim {
            let s = axis_sample(T::from_usize(coord[d]) + disp[d], self.dims[d]);
            base += s.lo * self.strides[d];
            axes[d] = s;
        }
        Cell { base, axes }
    }

    #[inline]
    fn corners(&self) -> usize {
        1 << self.ndim
    }

    /// Flat index and interpolation weight of corner `c` (bit d set = upper neighbor on axis d).
    #[inline]
    fn corner<T: Real>(&self, cell: &Cell<T>, c: usize) -> (usize, T) {
        let mut index = cell.base;
        let mut weight = T::one();
        for d in 0..self.ndim {
            let s = &cell.axes[d];
            if c >> d & 1 == 1 {
                index += self.strides[d];
                weight *= s.frac;
            } else {
                weight *= T::one() - s.frac;
            }
        }
        (index, weight)
    }

    /// Derivative of corner `c`'s weight with respect to the sample coordinate on `axis`.
    #[inline]
    fn corner_weight_derivative<T: Real>(&self, cell: &Cell<T>, c: usize, axis: usize) -> T {
        if cell.axes[axis].clamped {
            return T::zero();
        }
        let mut w = T::one();
        for d in 0..self.ndim {
            let s = &cell.axes[d];
            let upper = c >> d & 1 == 1;
            w *= match (d == axis, upper) {
                (true, true) => T::one(),
                (true, false) => -T::one(),
                (false, true) => s.frac,
                (false, false) => T::one() - s.frac,
            };
        }
        w
    }
}

fn check_geometry<T: Real>(m: &FeatureMap<T>, u: &DisplacementField<T>) -> Result<()> {
    if m.geom() != u.geom() {
        return Err(Error::GeometryMismatch { left: m.geom().dims().to_vec(), right: u.geom().dims().to_vec() });
    }
    Ok(())
}

/// Warps every channel of `m` by `u`.
pub fn warp_map<T: Real>(m: &FeatureMap<T>, u: &DisplacementField<T>) -> Result<FeatureMap<T>> {
    check_geometry(m, u)?;
    let sampler = Sampler::new(u);
    let ch = m.channels();
    let src = m.data();
    let n = u.geom().ndim();
    let mut out = vec![T::zero(); src.len()];
    for (voxel, dst) in out.chunks_exact_mut(ch).enumerate() {
        let cell = sampler.cell(voxel, &u.vectors()[voxel * n..(voxel + 1) * n]);
        for c in 0..sampler.corners() {
            let (q, w) = sampler.corner(&cell, c);
            for (k, slot) in dst.iter_mut().enumerate() {
                *slot += src[q * ch + k] * w;
            }
        }
    }
    Ok(FeatureMap::from_raw(m.geom(), ch, out))
}

/// Vector-Jacobian products of [`warp_map`] with respect to the moving map and the displacement.
pub fn warp_map_backward<T: Real>(
    m: &FeatureMap<T>,
    u: &DisplacementField<T>,
    upstream: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, DisplacementField<T>)> {
    check_geometry(m, u)?;
    m.ensure_same_shape(upstream)?;
    let sampler = Sampler::new(u);
    let ch = m.channels();
    let n = u.geom().ndim();
    let src = m.data();
    let up = upstream.data();
    let mut grad_m = vec![T::zero(); src.len()];
    let mut grad_u = vec![T::zero(); u.vectors().len()];
    for voxel in 0..u.geom().voxel_count() {
        let g = &up[voxel * ch..(voxel + 1) * ch];
        if g.iter().all(|v| v.is_zero()) {
            continue;
        }
        let cell = sampler.cell(voxel, &u.vectors()[voxel * n..(voxel + 1) * n]);
        for c in 0..sampler.corners() {
            let (q, w) = sampler.corner(&cell, c);
            let mut dot = T::zero();
            for k in 0..ch {
                grad_m[q * ch + k] += g[k] * w;
                dot += g[k] * src[q * ch + k];
            }
            for d in 0..n {
                grad_u[voxel * n + d] += dot * sampler.corner_weight_derivative(&cell, c, d);
            }
        }
    }
    Ok((
        FeatureMap::from_raw(m.geom(), ch, grad_m),
        DisplacementField::from_map(FeatureMap::from_raw(u.geom(), n, grad_u)).expect("n channels"),
    ))
}

/// `m ∘ (Id + u)` for a scalar image.
pub fn warp_image<T: Real>(m: &GridImage<T>, u: &DisplacementField<T>) -> Result<GridImage<T>> {
    warp_map(m.as_map(), u).map(|w| GridImage::from_map(w).expect("one channel"))
}

/// Gradients of `⟨upstream, warp_image(m, u)⟩` with respect to `m` and `u`.
pub fn warp_backward<T: Real>(
    m: &GridImage<T>,
    u: &DisplacementField<T>,
    upstream: &GridImage<T>,
) -> Result<(GridImage<T>, DisplacementField<T>)> {
    let (gm, gu) = warp_map_backward(m.as_map(), u, upstream.as_map())?;
    Ok((GridImage::from_map(gm).expect("one channel"), gu))
}

/// Warps each channel of a segmentation independently.
pub fn warp_segmentation<T: Real>(s: &SegmentationMap<T>, u: &DisplacementField<T>) -> Result<SegmentationMap<T>> {
    warp_map(s.as_map(), u).map(SegmentationMap::from_map_unchecked)
}
