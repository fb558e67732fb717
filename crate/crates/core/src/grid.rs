//! Regular voxel grids and the fields that live on them.
//!
//! Layout: row-major with the **last axis fastest**. For a 2D grid with
//! extents `[d0, d1]` the voxel `(i, j)` lives at flat index `i * d1 + j`; in
//! 3D `(i, j, k)` lives at `(i * d1 + j) * d2 + k`. Multi-channel fields store
//! all channels of a voxel contiguously (channels-last), so channel `c` of
//! voxel `v` is at `v * channels + c`. Displacement component `d` is the
//! offset along axis `d`, in voxel units.

use crate::error::{Error, Result};
use crate::real::Real;

/// Extents of an n-D grid, n ∈ {2, 3}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridGeometry {
    ndim: usize,
    // Unused trailing axes are 1, so 2D grids can be walked as 3D ones.
    dims: [usize; 3],
}

impl GridGeometry {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::InvalidGeometry(format!(
                "only 2D and 3D grids are supported, got {} axes",
                dims.len()
            )));
        }
        if let Some(&bad) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidGeometry(format!(
                "every extent must be at least 2, got {bad} in {dims:?}"
            )));
        }
        // headroom so voxel * channel * byte offsets can never overflow
        let fits = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_some_and(|n| n <= isize::MAX as usize / 64);
        if !fits {
            return Err(Error::InvalidGeometry(format!("grid {dims:?} is too large")));
        }
        let mut padded = [1; 3];
        padded[..dims.len()].copy_from_slice(dims);
        Ok(GridGeometry { ndim: dims.len(), dims: padded })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    /// Extents padded to three axes with trailing 1s.
    pub fn dims3(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat-index stride of each of the three (padded) axes.
    pub fn strides3(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }

    pub fn index(&self, coord: &[usize]) -> usize {
        debug_assert_eq!(coord.len(), self.ndim);
        coord.iter().zip(self.dims()).fold(0, |acc, (&c, &d)| {
            debug_assert!(c < d);
            acc * d + c
        })
    }

    pub fn coord(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim];
        for (slot, &d) in out.iter_mut().zip(self.dims()).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    /// Padded three-axis coordinate of a flat index.
    #[inline]
    pub fn coord3(&self, index: usize) -> [usize; 3] {
        let [_, d1, d2] = self.dims;
        [index / (d1 * d2), (index / d2) % d1, index % d2]
    }

    /// Geometry after a stride-2 "same" convolution (ceil of half extents).
    pub fn downsampled(&self) -> Result<Self> {
        let dims: Vec<usize> = self.dims().iter().map(|d| d.div_ceil(2)).collect();
        GridGeometry::new(&dims)
    }

    pub fn upsampled(&self) -> Self {
        let dims: Vec<usize> = self.dims().iter().map(|d| d * 2).collect();
        GridGeometry::new(&dims).expect("doubling keeps extents valid")
    }

    pub(crate) fn ensure_same(&self, other: &GridGeometry) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch { left: self.dims().to_vec(), right: other.dims().to_vec() })
        }
    }
}

/// Multi-channel field on a grid, channels-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    geom: GridGeometry,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(geom: GridGeometry, channels: usize) -> Self {
        FeatureMap { geom, channels, data: vec![T::zero(); geom.voxel_count() * channels] }
    }

    pub fn filled(geom: GridGeometry, channels: usize, value: T) -> Self {
        FeatureMap { geom, channels, data: vec![value; geom.voxel_count() * channels] }
    }

    /// Validating constructor: length must match and every value must be finite.
    pub fn new(geom: GridGeometry, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch("a feature map needs at least one channel".into()));
        }
        if data.len() != geom.voxel_count() * channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values ({} voxels x {} channels), got {}",
                geom.voxel_count() * channels,
                geom.voxel_count(),
                channels,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(FeatureMap { geom, channels, data })
    }

    pub(crate) fn from_raw(geom: GridGeometry, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), geom.voxel_count() * channels);
        FeatureMap { geom, channels, data }
    }

    pub fn geom(&self) -> GridGeometry {
        self.geom
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, voxel: usize, channel: usize) -> T {
        self.data[voxel * self.channels + channel]
    }

    /// Copy of a single channel as a one-channel map.
    pub fn channel(&self, c: usize) -> FeatureMap<T> {
        assert!(c < self.channels);
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        FeatureMap::from_raw(self.geom, 1, data)
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap::from_raw(self.geom, self.channels, self.data.iter().map(|v| U::lit(v.as_f64())).collect())
    }

    pub fn ensure_same_shape(&self, other: &FeatureMap<T>) -> Result<()> {
        self.geom.ensure_same(&other.geom)?;
        if self.channels != other.channels {
            return Err(Error::ShapeMismatch(format!(
                "channel count {} vs {}",
                self.channels, other.channels
            )));
        }
        Ok(())
    }
}

/// Scalar intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage<T>(FeatureMap<T>);

impl<T: Real> GridImage<T> {
    pub fn new(geom: GridGeometry, values: Vec<T>) -> Result<Self> {
        FeatureMap::new(geom, 1, values).map(GridImage)
    }

    pub fn zeros(geom: GridGeometry) -> Self {
        GridImage(FeatureMap::zeros(geom, 1))
    }

    pub fn from_fn(geom: GridGeometry, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let values = (0..geom.voxel_count()).map(|i| f(&geom.coord(i))).collect();
        Self::new(geom, values)
    }

    pub fn from_map(map: FeatureMap<T>) -> Result<Self> {
        if map.channels() != 1 {
            return Err(Error::ShapeMismatch(format!("an image has 1 channel, got {}", map.channels())));
        }
        Ok(GridImage(map))
    }

    pub fn geom(&self) -> GridGeometry {
        self.0.geom
    }

    pub fn values(&self) -> &[T] {
        &self.0.data
    }

    pub fn as_map(&self) -> &FeatureMap<T> {
        &self.0
    }

    pub fn into_map(self) -> FeatureMap<T> {
        self.0
    }

    pub fn min_max(&self) -> (T, T) {
        self.values()
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn cast<U: Real>(&self) -> GridImage<U> {
        GridImage(self.0.cast())
    }
}

/// Per-voxel displacement `u`; the registration map is `Id + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField<T>(FeatureMap<T>);

impl<T: Real> DisplacementField<T> {
    /// `vectors` holds `ndim` components per voxel, voxel-major.
    pub fn new(geom: GridGeometry, vectors: Vec<T>) -> Result<Self> {
        FeatureMap::new(geom, geom.ndim(), vectors).map(DisplacementField)
    }

    pub fn from_fn(geom: GridGeometry, mut f: impl FnMut(&[usize]) -> Vec<T>) -> Result<Self> {
        let mut vectors = Vec::with_capacity(geom.voxel_count() * geom.ndim());
        for i in 0..geom.voxel_count() {
            let v = f(&geom.coord(i));
            if v.len() != geom.ndim() {
                return Err(Error::ShapeMismatch(format!(
                    "displacement vectors need {} components, got {}",
                    geom.ndim(),
                    v.len()
                )));
            }
            vectors.extend(v);
        }
        Self::new(geom, vectors)
    }

    pub fn from_map(map: FeatureMap<T>) -> Result<Self> {
        if map.channels() != map.geom().ndim() {
            return Err(Error::ShapeMismatch(format!(
                "a {}D displacement field has {} channels, got {}",
                map.geom().ndim(),
                map.geom().ndim(),
                map.channels()
            )));
        }
        Ok(DisplacementField(map))
    }

    pub fn geom(&self) -> GridGeometry {
        self.0.geom
    }

    pub fn vectors(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [T] {
        &mut self.0.data
    }

    pub fn vector(&self, voxel: usize) -> &[T] {
        let n = self.0.channels;
        &self.0.data[voxel * n..(voxel + 1) * n]
    }

    pub fn as_map(&self) -> &FeatureMap<T> {
        &self.0
    }

    pub fn into_map(self) -> FeatureMap<T> {
        self.0
    }

    pub fn max_abs(&self) -> T {
        self.vectors().iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> DisplacementField<U> {
        DisplacementField(self.0.cast())
    }
}

/// The zero displacement field, i.e. the identity map.
pub fn identity_displacement<T: Real>(geom: GridGeometry) -> DisplacementField<T> {
    DisplacementField(FeatureMap::zeros(geom, geom.ndim()))
}

/// K-channel (soft) segmentation; channel `k` is the mask of structure `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap<T>(FeatureMap<T>);

impl<T: Real> SegmentationMap<T> {
    pub fn new(geom: GridGeometry, channels: usize, weights: Vec<T>) -> Result<Self> {
        let map = FeatureMap::new(geom, channels, weights)?;
        if let Some(index) = map.data.iter().position(|&w| w < T::zero() || w > T::one()) {
            return Err(Error::ShapeMismatch(format!(
                "segmentation weight at flat index {index} lies outside [0, 1]"
            )));
        }
        Ok(SegmentationMap(map))
    }

    pub(crate) fn from_map_unchecked(map: FeatureMap<T>) -> Self {
        SegmentationMap(map)
    }

    pub fn geom(&self) -> GridGeometry {
        self.0.geom
    }

    pub fn channels(&self) -> usize {
        self.0.channels
    }

    pub fn weights(&self) -> &[T] {
        &self.0.data
    }

    pub fn row(&self, voxel: usize) -> &[T] {
        let k = self.0.channels;
        &self.0.data[voxel * k..(voxel + 1) * k]
    }

    pub fn as_map(&self) -> &FeatureMap<T> {
        &self.0
    }

    pub fn into_map(self) -> FeatureMap<T> {
        self.0
    }

    pub fn cast<U: Real>(&self) -> SegmentationMap<U> {
        SegmentationMap(self.0.cast())
    }
}

/// Exact one-hot encoding of an integer label image with `count` labels.
pub fn onehot_from_labels<T: Real>(labels: &GridImage<T>, count: usize) -> Result<SegmentationMap<T>> {
    if count == 0 {
        return Err(Error::Config("label count must be positive".into()));
    }
    let geom = labels.geom();
    let mut weights = vec![T::zero(); geom.voxel_count() * count];
    for (index, &v) in labels.values().iter().enumerate() {
        let code = label_code(v, count).ok_or(Error::LabelOutOfRange { index, value: v.as_f64(), count })?;
        weights[index * count + code] = T::one();
    }
    Ok(SegmentationMap(FeatureMap::from_raw(geom, count, weights)))
}

/// Integer code of a label value, if it is an integer in `[0, count)`.
pub fn label_code<T: Real>(v: T, count: usize) -> Option<usize> {
    let x = v.as_f64();
    if x.fract() == 0.0 && x >= 0.0 && x < count as f64 {
        Some(x as usize)
    } else {
        None
    }
}

/// Per-voxel argmax over channels; ties go to the lowest channel index.
pub fn argmax_labels<T: Real>(seg: &SegmentationMap<T>) -> GridImage<T> {
    let k = seg.channels();
    let values = seg
        .weights()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (c, &w) in row.iter().enumerate().skip(1) {
                if w > row[best] {
                    best = c;
                }
            }
            T::from_usize(best)
        })
        .collect();
    GridImage(FeatureMap::from_raw(seg.geom(), 1, values))
}
