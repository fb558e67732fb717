//! Registration losses with their vector-Jacobian products.
//!
//! Every `*_backward` takes the scalar cotangent of the loss (`upstream`) and
//! returns the gradient with respect to the warped / predicted argument, scaled
//! by it.
//!
//! The combined objectives ([`unsup_loss`], [`aux_loss`]) put every term on a
//! per-voxel scale: MSE is already a mean, the cross-correlation term enters as
//! `-CC / |Ω|` and the diffusion term as `smoothness(u) / |Ω|`. The standalone
//! `local_cc` and `smoothness` functions return the plain sums over voxels.

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, FeatureMap, GridGeometry, GridImage, SegmentationMap};
use crate::real::Real;
use crate::warp::{warp_map, warp_map_backward};

/// Added to the CC variance product and to every Dice denominator.
pub const LOSS_EPSILON: f64 = 1e-5;

pub const DEFAULT_CC_WINDOW: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimKind {
    Mse,
    Cc,
}

impl std::str::FromStr for SimKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(SimKind::Mse),
            "cc" | "ncc" => Ok(SimKind::Cc),
            other => Err(Error::Config(format!("unknown similarity '{other}', expected mse or cc"))),
        }
    }
}

impl std::fmt::Display for SimKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimKind::Mse => "mse",
            SimKind::Cc => "cc",
        })
    }
}

/// Weight of the auxiliary segmentation term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxWeight {
    Weight(f64),
    /// Segmentation term only; image and smoothness terms are dropped.
    SegOnly,
}

impl AuxWeight {
    pub fn uses_segmentations(&self) -> bool {
        match *self {
            AuxWeight::Weight(g) => g > 0.0,
            AuxWeight::SegOnly => true,
        }
    }
}

impl std::str::FromStr for AuxWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg-only" | "inf" | "infinity" => Ok(AuxWeight::SegOnly),
            _ => {
                let g: f64 = s.parse().map_err(|_| Error::Config(format!("invalid gamma '{s}'")))?;
                if !(g >= 0.0 && g.is_finite()) {
                    return Err(Error::Config(format!("gamma must be a finite non-negative number, got {s}")));
                }
                Ok(AuxWeight::Weight(g))
            }
        }
    }
}

impl std::fmt::Display for AuxWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AuxWeight::Weight(g) => write!(f, "{g}"),
            AuxWeight::SegOnly => f.write_str("seg-only"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: AuxWeight,
    pub cc_window: usize,
}

impl LossWeights {
    pub fn new(lambda: f64, gamma: AuxWeight, cc_window: usize) -> Result<Self> {
        let w = LossWeights { lambda, gamma, cc_window };
        w.validate()?;
        Ok(w)
    }

    pub fn unsupervised(lambda: f64) -> Self {
        LossWeights { lambda, gamma: AuxWeight::Weight(0.0), cc_window: DEFAULT_CC_WINDOW }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if let AuxWeight::Weight(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be non-negative, got {g}")));
            }
        }
        check_window(self.cc_window)
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Config(format!("CC window must be odd and at least 3, got {window}")));
    }
    Ok(())
}

fn same_geom(a: GridGeometry, b: GridGeometry) -> Result<()> {
    if a != b {
        return Err(Error::GeometryMismatch { left: a.dims().to_vec(), right: b.dims().to_vec() });
    }
    Ok(())
}

// ---------------------------------------------------------------- MSE

pub fn mse<T: Real>(f: &GridImage<T>, warped: &GridImage<T>) -> Result<T> {
    same_geom(f.geom(), warped.geom())?;
    let sum: T = f.values().iter().zip(warped.values()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::from_usize(f.geom().voxel_count()))
}

/// Gradient of `upstream * mse(f, warped)` with respect to `warped`.
pub fn mse_backward<T: Real>(f: &GridImage<T>, warped: &GridImage<T>, upstream: T) -> Result<GridImage<T>> {
    same_geom(f.geom(), warped.geom())?;
    let scale = T::lit(2.0) * upstream / T::from_usize(f.geom().voxel_count());
    let grad = f.values().iter().zip(warped.values()).map(|(&a, &b)| (b - a) * scale).collect();
    Ok(GridImage::from_map(FeatureMap::from_raw(f.geom(), 1, grad)).expect("one channel"))
}

// ---------------------------------------------------------------- local CC

/// Sum over the clamped cubic window of radius `radius` around every voxel.
pub(crate) fn box_sum<T: Real>(geom: GridGeometry, data: &[T], radius: usize) -> Vec<T> {
    let dims = geom.dims3();
    let strides = geom.strides3();
    let mut cur = data.to_vec();
    let mut prefix = Vec::new();
    for axis in 0..geom.ndim() {
        let len = dims[axis];
        let stride = strides[axis];
        let mut next = vec![T::zero(); cur.len()];
        // every line along `axis` starts at a voxel whose `axis` coordinate is 0
        for start in 0..cur.len() {
            if !(start / stride).is_multiple_of(len) {
                continue;
            }
            prefix.clear();
            prefix.push(T::zero());
            let mut acc = T::zero();
            for i in 0..len {
                acc += cur[start + i * stride];
                prefix.push(acc);
            }
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1) + 1;
                next[start + i * stride] = prefix[hi] - prefix[lo];
            }
        }
        cur = next;
    }
    cur
}

fn window_counts<T: Real>(geom: GridGeometry, radius: usize) -> Vec<T> {
    let dims = geom.dims3();
    let span = |c: usize, len: usize| (c + radius).min(len - 1) - c.saturating_sub(radius) + 1;
    (0..geom.voxel_count())
        .map(|v| {
            let c = geom.coord3(v);
            let mut n = 1;
            for d in 0..geom.ndim() {
                n *= span(c[d], dims[d]);
            }
            T::from_usize(n)
        })
        .collect()
}

/// Windowed centered statistics shared by the forward and backward pass.
struct CcStats<T> {
    mean_f: Vec<T>,
    mean_w: Vec<T>,
    cross: Vec<T>,
    var_f: Vec<T>,
    var_w: Vec<T>,
}

fn cc_stats<T: Real>(f: &GridImage<T>, w: &GridImage<T>, window: usize) -> Result<CcStats<T>> {
    same_geom(f.geom(), w.geom())?;
    check_window(window)?;
    let geom = f.geom();
    let r = window / 2;
    let fv = f.values();
    let wv = w.values();
    let sf = box_sum(geom, fv, r);
    let sw = box_sum(geom, wv, r);
    let sff = box_sum(geom, &fv.iter().map(|&a| a * a).collect::<Vec<_>>(), r);
    let sww = box_sum(geom, &wv.iter().map(|&a| a * a).collect::<Vec<_>>(), r);
    let sfw = box_sum(geom, &fv.iter().zip(wv).map(|(&a, &b)| a * b).collect::<Vec<_>>(), r);
    let counts = window_counts::<T>(geom, r);
    let n = geom.voxel_count();
    let mut st = CcStats {
        mean_f: Vec::with_capacity(n),
        mean_w: Vec::with_capacity(n),
        cross: Vec::with_capacity(n),
        var_f: Vec::with_capacity(n),
        var_w: Vec::with_capacity(n),
    };
    for p in 0..n {
        let mf = sf[p] / counts[p];
        let mw = sw[p] / counts[p];
        st.mean_f.push(mf);
        st.mean_w.push(mw);
        st.cross.push(sfw[p] - mf * sw[p]);
        st.var_f.push(sff[p] - mf * sf[p]);
        st.var_w.push(sww[p] - mw * sw[p]);
    }
    Ok(st)
}

/// Per-voxel squared normalized correlation over the clamped window; each term lies in [0, 1].
pub fn local_cc_terms<T: Real>(f: &GridImage<T>, warped: &GridImage<T>, window: usize) -> Result<GridImage<T>> {
    let st = cc_stats(f, warped, window)?;
    let eps = T::lit(LOSS_EPSILON);
    let terms = (0..st.cross.len())
        .map(|p| st.cross[p] * st.cross[p] / (st.var_f[p] * st.var_w[p] + eps))
        .collect();
    Ok(GridImage::from_map(FeatureMap::from_raw(f.geom(), 1, terms)).expect("one channel"))
}

/// Local cross-correlation summed over all voxels (higher is better).
pub fn local_cc<T: Real>(f: &GridImage<T>, warped: &GridImage<T>, window: usize) -> Result<T> {
    Ok(local_cc_terms(f, warped, window)?.values().iter().copied().sum())
}

/// Gradient of `upstream * local_cc(f, warped)` with respect to `warped`.
pub fn local_cc_backward<T: Real>(
    f: &GridImage<T>,
    warped: &GridImage<T>,
    window: usize,
    upstream: T,
) -> Result<GridImage<T>> {
    let st = cc_stats(f, warped, window)?;
    let geom = f.geom();
    let eps = T::lit(LOSS_EPSILON);
    let two = T::lit(2.0);
    let n = geom.voxel_count();
    let mut a = Vec::with_capacity(n);
    let mut a_mf = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut b_mw = Vec::with_capacity(n);
    for p in 0..n {
        let denom = st.var_f[p] * st.var_w[p] + eps;
        let ap = two * st.cross[p] / denom;
        let bp = two * st.cross[p] * st.cross[p] * st.var_f[p] / (denom * denom);
        a.push(ap);
        a_mf.push(ap * st.mean_f[p]);
        b.push(bp);
        b_mw.push(bp * st.mean_w[p]);
    }
    // the clamped window relation is symmetric, so sums over {p : i ∈ win(p)} are box sums
    let r = window / 2;
    let (sa, sa_mf, sb, sb_mw) =
        (box_sum(geom, &a, r), box_sum(geom, &a_mf, r), box_sum(geom, &b, r), box_sum(geom, &b_mw, r));
    let fv = f.values();
    let wv = warped.values();
    let grad = (0..n)
        .map(|i| upstream * (fv[i] * sa[i] - sa_mf[i] - wv[i] * sb[i] + sb_mw[i]))
        .collect();
    Ok(GridImage::from_map(FeatureMap::from_raw(geom, 1, grad)).expect("one channel"))
}

// ---------------------------------------------------------------- smoothness

/// Diffusion regularizer: sum over voxels of squared forward differences of `u`.
/// Differences whose forward neighbor falls outside the grid are omitted.
pub fn smoothness<T: Real>(u: &DisplacementField<T>) -> T {
    let geom = u.geom();
    let n = geom.ndim();
    let dims = geom.dims3();
    let strides = geom.strides3();
    let v = u.vectors();
    let mut total = T::zero();
    for p in 0..geom.voxel_count() {
        let c = geom.coord3(p);
        for d in 0..n {
            if c[d] + 1 >= dims[d] {
                continue;
            }
            let q = p + strides[d];
            for k in 0..n {
                let diff = v[q * n + k] - v[p * n + k];
                total += diff * diff;
            }
        }
    }
    total
}

/// Gradient of `upstream * smoothness(u)` with respect to `u`.
pub fn smoothness_backward<T: Real>(u: &DisplacementField<T>, upstream: T) -> DisplacementField<T> {
    let geom = u.geom();
    let n = geom.ndim();
    let dims = geom.dims3();
    let strides = geom.strides3();
    let v = u.vectors();
    let scale = T::lit(2.0) * upstream;
    let mut grad = vec![T::zero(); v.len()];
    for p in 0..geom.voxel_count() {
        let c = geom.coord3(p);
        for d in 0..n {
            if c[d] + 1 >= dims[d] {
                continue;
            }
            let q = p + strides[d];
            for k in 0..n {
                let g = scale * (v[q * n + k] - v[p * n + k]);
                grad[q * n + k] += g;
                grad[p * n + k] -= g;
            }
        }
    }
    DisplacementField::from_map(FeatureMap::from_raw(geom, n, grad)).expect("n channels")
}

// ---------------------------------------------------------------- Dice

fn check_seg_pair<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> Result<()> {
    a.ensure_same_shape(b)
}

struct DiceParts<T> {
    inter: Vec<T>,
    denom: Vec<T>,
}

fn dice_parts<T: Real>(sf: &FeatureMap<T>, sw: &FeatureMap<T>) -> Result<DiceParts<T>> {
    check_seg_pair(sf, sw)?;
    let k = sf.channels();
    let mut inter = vec![T::zero(); k];
    let mut denom = vec![T::lit(LOSS_EPSILON); k];
    for (rf, rw) in sf.data().chunks_exact(k).zip(sw.data().chunks_exact(k)) {
        for c in 0..k {
            inter[c] += rf[c] * rw[c];
            denom[c] += rf[c] + rw[c];
        }
    }
    Ok(DiceParts { inter, denom })
}

/// Soft Dice per channel: `2 Σ sf·sw / (Σ sf + Σ sw + ε)`.
pub fn soft_dice<T: Real>(sf: &SegmentationMap<T>, sw: &SegmentationMap<T>) -> Result<Vec<T>> {
    soft_dice_maps(sf.as_map(), sw.as_map())
}

pub(crate) fn soft_dice_maps<T: Real>(sf: &FeatureMap<T>, sw: &FeatureMap<T>) -> Result<Vec<T>> {
    let parts = dice_parts(sf, sw)?;
    Ok(parts.inter.iter().zip(&parts.denom).map(|(&i, &d)| T::lit(2.0) * i / d).collect())
}

/// Negative mean soft Dice over channels.
pub fn seg_loss<T: Real>(sf: &SegmentationMap<T>, sw: &SegmentationMap<T>) -> Result<T> {
    seg_loss_maps(sf.as_map(), sw.as_map())
}

pub(crate) fn seg_loss_maps<T: Real>(sf: &FeatureMap<T>, sw: &FeatureMap<T>) -> Result<T> {
    let dice = soft_dice_maps(sf, sw)?;
    Ok(-dice.iter().copied().sum::<T>() / T::from_usize(dice.len()))
}

/// Gradient of `upstream * seg_loss(sf, sw)` with respect to `sw`.
pub fn seg_loss_backward<T: Real>(
    sf: &SegmentationMap<T>,
    sw: &SegmentationMap<T>,
    upstream: T,
) -> Result<SegmentationMap<T>> {
    seg_loss_backward_maps(sf.as_map(), sw.as_map(), upstream).map(SegmentationMap::from_map_unchecked)
}

pub(crate) fn seg_loss_backward_maps<T: Real>(
    sf: &FeatureMap<T>,
    sw: &FeatureMap<T>,
    upstream: T,
) -> Result<FeatureMap<T>> {
    let parts = dice_parts(sf, sw)?;
    let k = sf.channels();
    let two = T::lit(2.0);
    let scale = -upstream / T::from_usize(k);
    // d dice_c / d sw_c(p) = 2 sf_c(p) / D_c - 2 I_c / D_c²
    let coef_f: Vec<T> = parts.denom.iter().map(|&d| scale * two / d).collect();
    let coef_c: Vec<T> = parts.inter.iter().zip(&parts.denom).map(|(&i, &d)| scale * two * i / (d * d)).collect();
    let grad = sf
        .data()
        .chunks_exact(k)
        .flat_map(|rf| (0..k).map(|c| rf[c] * coef_f[c] - coef_c[c]).collect::<Vec<_>>())
        .collect();
    Ok(FeatureMap::from_raw(sf.geom(), k, grad))
}

// ---------------------------------------------------------------- combined objectives

/// Value of each term of a registration objective, already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub similarity: T,
    pub smoothness: T,
    pub segmentation: T,
}

pub(crate) fn similarity_value<T: Real>(f: &GridImage<T>, warped: &GridImage<T>, sim: SimKind, window: usize) -> Result<T> {
    match sim {
        SimKind::Mse => mse(f, warped),
        SimKind::Cc => Ok(local_cc(f, warped, window)? * (-T::one() / T::from_usize(f.geom().voxel_count()))),
    }
}

pub(crate) fn similarity_backward<T: Real>(
    f: &GridImage<T>,
    warped: &GridImage<T>,
    sim: SimKind,
    window: usize,
) -> Result<GridImage<T>> {
    match sim {
        SimKind::Mse => mse_backward(f, warped, T::one()),
        SimKind::Cc => local_cc_backward(f, warped, window, -T::one() / T::from_usize(f.geom().voxel_count())),
    }
}

fn check_inputs<T: Real>(f: &GridImage<T>, m: &GridImage<T>, u: &DisplacementField<T>) -> Result<()> {
    same_geom(f.geom(), m.geom())?;
    same_geom(f.geom(), u.geom())
}

/// `L_sim(f, m ∘ φ) + λ · smoothness(u) / |Ω|`.
pub fn unsup_loss<T: Real>(
    f: &GridImage<T>,
    m: &GridImage<T>,
    u: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
) -> Result<LossBreakdown<T>> {
    Ok(unsup_loss_with_grad(f, m, u, weights, sim, false)?.0)
}

/// Loss value together with its gradient with respect to `u`.
pub fn unsup_loss_and_grad<T: Real>(
    f: &GridImage<T>,
    m: &GridImage<T>,
    u: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
) -> Result<(LossBreakdown<T>, DisplacementField<T>)> {
    let (loss, grad) = unsup_loss_with_grad(f, m, u, weights, sim, true)?;
    Ok((loss, grad.expect("requested")))
}

fn unsup_loss_with_grad<T: Real>(
    f: &GridImage<T>,
    m: &GridImage<T>,
    u: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
    want_grad: bool,
) -> Result<(LossBreakdown<T>, Option<DisplacementField<T>>)> {
    weights.validate()?;
    check_inputs(f, m, u)?;
    let warped = GridImage::from_map(warp_map(m.as_map(), u)?).expect("one channel");
    let similarity = similarity_value(f, &warped, sim, weights.cc_window)?;
    let lambda = T::lit(weights.lambda) / T::from_usize(u.geom().voxel_count());
    let smooth = lambda * smoothness(u);
    let loss = LossBreakdown { total: similarity + smooth, similarity, smoothness: smooth, segmentation: T::zero() };
    if !want_grad {
        return Ok((loss, None));
    }
    let g_warped = similarity_backward(f, &warped, sim, weights.cc_window)?;
    let (_, mut grad) = warp_map_backward(m.as_map(), u, g_warped.as_map())?;
    add_field(&mut grad, &smoothness_backward(u, lambda));
    Ok((loss, Some(grad)))
}

pub(crate) fn add_field<T: Real>(acc: &mut DisplacementField<T>, other: &DisplacementField<T>) {
    for (a, &b) in acc.vectors_mut().iter_mut().zip(other.vectors()) {
        *a += b;
    }
}

/// `unsup_loss + γ · seg_loss(sf, sm ∘ φ)`; under [`AuxWeight::SegOnly`] only the segmentation term remains.
pub fn aux_loss<T: Real>(
    f: &GridImage<T>,
    m: &GridImage<T>,
    sf: &SegmentationMap<T>,
    sm: &SegmentationMap<T>,
    u: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
) -> Result<LossBreakdown<T>> {
    Ok(aux_loss_with_grad(f, m, sf, sm, u, weights, sim, false)?.0)
}

pub fn aux_loss_and_grad<T: Real>(
    f: &GridImage<T>,
    m: &GridImage<T>,
    sf: &SegmentationMap<T>,
    sm: &SegmentationMap<T>,
    u: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
) -> Result<(LossBreakdown<T>, DisplacementField<T>)> {
    let (loss, grad) = aux_loss_with_grad(f, m, sf, sm, u, weights, sim, true)?;
    Ok((loss, grad.expect("requested")))
}

#[allow(clippy::too_many_arguments)]
fn aux_loss_with_grad<T: Real>(
    f: &GridImage<T>,
    m: &GridImage<T>,
    sf: &SegmentationMap<T>,
    sm: &SegmentationMap<T>,
    u: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
    want_grad: bool,
) -> Result<(LossBreakdown<T>, Option<DisplacementField<T>>)> {
    weights.validate()?;
    check_inputs(f, m, u)?;
    check_seg_pair(sf.as_map(), sm.as_map())?;
    same_geom(sf.geom(), u.geom())?;
    let gamma = match weights.gamma {
        AuxWeight::Weight(g) if g == 0.0 => return unsup_loss_with_grad(f, m, u, weights, sim, want_grad),
        AuxWeight::Weight(g) => Some(T::lit(g)),
        AuxWeight::SegOnly => None,
    };
    let (mut loss, mut grad) = match gamma {
        Some(_) => unsup_loss_with_grad(f, m, u, weights, sim, want_grad)?,
        None => (
            LossBreakdown { total: T::zero(), similarity: T::zero(), smoothness: T::zero(), segmentation: T::zero() },
            want_grad.then(|| crate::grid::identity_displacement(u.geom())),
        ),
    };
    let scale = gamma.unwrap_or_else(T::one);
    let warped_seg = warp_map(sm.as_map(), u)?;
    let seg = scale * seg_loss_maps(sf.as_map(), &warped_seg)?;
    loss.segmentation = seg;
    loss.total += seg;
    if let Some(g) = grad.as_mut() {
        let upstream = seg_loss_backward_maps(sf.as_map(), &warped_seg, scale)?;
        let (_, g_seg) = warp_map_backward(sm.as_map(), u, &upstream)?;
        add_field(g, &g_seg);
    }
    Ok((loss, grad))
}
