//! Synthetic registration problems with known deformations.
//!
//! A base image is drawn as a large ellipse (label 1) holding smaller ellipses
//! (labels 2..), each structure with its own intensity, then blurred. The moving
//! image is the base warped by a smooth random field built from control-point
//! offsets; the fixed image is the base plus Gaussian noise. Label maps follow the
//! same construction, so `fixed_labels` belongs to `fixed` and `moving_labels` to
//! `moving`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::{jacobian_report, warp_labels};
use crate::grid::{DisplacementField, GridGeometry, GridImage};
use crate::real::Real;
use crate::warp::warp_image;

const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub geom: GridGeometry,
    /// Number of foreground structures (2 to 4); label maps use codes `0..=structures`.
    pub structures: usize,
    /// Largest displacement magnitude of the true field, in voxels.
    pub amplitude: f64,
    /// Spacing of the deformation control points, in voxels.
    pub control_spacing: f64,
    /// Standard deviation of the noise added to the fixed image.
    pub noise: f64,
    /// Width of the blur applied to the drawn shapes.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Defaults tuned for 64 x 64 (or similarly sized) grids.
    pub fn new(geom: GridGeometry, seed: u64) -> Self {
        SynthSpec { geom, structures: 3, amplitude: 8.0, control_spacing: 16.0, noise: 0.02, blur_sigma: 1.0, seed }
    }

    pub fn label_count(&self) -> usize {
        self.structures + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.structures) {
            return Err(Error::Config(format!("structure count must be 2 to 4, got {}", self.structures)));
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.amplitude) || !nonneg(self.noise) || !nonneg(self.blur_sigma) {
            return Err(Error::Config("amplitude, noise and blur must be finite and non-negative".into()));
        }
        if !(self.control_spacing >= 1.0 && self.control_spacing.is_finite()) {
            return Err(Error::Config(format!("control spacing must be at least 1, got {}", self.control_spacing)));
        }
        Ok(())
    }

    /// The spec for pair `index` of a dataset: same settings, derived seed.
    pub fn for_pair(&self, index: u64) -> Self {
        SynthSpec { seed: splitmix(self.seed ^ splitmix(index)), ..self.clone() }
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair<T> {
    pub fixed: GridImage<T>,
    pub moving: GridImage<T>,
    pub fixed_labels: GridImage<T>,
    pub moving_labels: GridImage<T>,
    /// Field that produced the moving image: `moving = base ∘ (Id + u_true)`.
    pub u_true: DisplacementField<T>,
}

struct Ellipse {
    center: Vec<f64>,
    radii: Vec<f64>,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, c: &[usize]) -> bool {
        let d: Vec<f64> = c.iter().zip(&self.center).map(|(&x, &m)| x as f64 - m).collect();
        let (s, co) = self.angle.sin_cos();
        // rotate in the plane of the first two axes
        let mut r = d.clone();
        r[0] = co * d[0] + s * d[1];
        r[1] = -s * d[0] + co * d[1];
        r.iter().zip(&self.radii).map(|(x, rad)| (x / rad).powi(2)).sum::<f64>() <= 1.0
    }
}

fn draw_labels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let g = spec.geom;
    let dims = g.dims();
    let n = g.ndim();
    let center: Vec<f64> = dims.iter().map(|&d| (d as f64 - 1.0) / 2.0 + rng.random_range(-0.05..0.05) * d as f64).collect();
    let radii: Vec<f64> = dims.iter().map(|&d| d as f64 * rng.random_range(0.30..0.38)).collect();
    let body = Ellipse { center, radii, angle: rng.random_range(-0.5..0.5) };
    let mut inner = Vec::new();
    for k in 0..spec.structures - 1 {
        // spread the inner structures around the body center
        let phase = std::f64::consts::TAU * (k as f64 + rng.random_range(-0.15..0.15)) / (spec.structures - 1) as f64;
        let off = rng.random_range(0.35..0.5);
        let center: Vec<f64> = (0..n)
            .map(|a| {
                let dir = match a {
                    0 => phase.cos(),
                    1 => phase.sin(),
                    _ => rng.random_range(-0.3..0.3),
                };
                body.center[a] + dir * off * body.radii[a]
            })
            .collect();
        // volumes shrink faster in 3D, so inner structures are relatively larger there
        let rel = if n == 2 { 0.28..0.4 } else { 0.42..0.52 };
        let radii: Vec<f64> = (0..n).map(|a| body.radii[a] * rng.random_range(rel.clone())).collect();
        inner.push(Ellipse { center, radii, angle: rng.random_range(0.0..std::f64::consts::PI) });
    }
    (0..g.voxel_count())
        .map(|p| {
            let c = g.coord(p);
            let mut label = if body.contains(&c) { 1 } else { 0 };
            for (k, e) in inner.iter().enumerate() {
                if e.contains(&c) {
                    label = k as u8 + 2;
                }
            }
            label
        })
        .collect()
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(geom: GridGeometry, data: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let dims = geom.dims3();
    let strides = geom.strides3();
    let mut cur = data.to_vec();
    for axis in 0..geom.ndim() {
        let mut next = vec![0.0; cur.len()];
        let n = dims[axis] as isize;
        for (p, out) in next.iter_mut().enumerate() {
            let x = geom.coord3(p)[axis] as isize;
            let base = p as isize - x * strides[axis] as isize;
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                let q = (x + j as isize - radius).clamp(0, n - 1);
                acc += w * cur[(base + q * strides[axis] as isize) as usize];
            }
            *out = acc / norm;
        }
        cur = next;
    }
    cur
}

/// Smooth random field: uniform offsets on a control lattice, interpolated with
/// C¹ smoothstep weights, then scaled so the largest vector has length `amplitude`.
fn random_field(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = spec.geom;
    let n = g.ndim();
    let dims = g.dims3();
    let lattice: Vec<usize> = (0..3)
        .map(|a| if a < n { ((dims[a] - 1) as f64 / spec.control_spacing).ceil() as usize + 1 } else { 1 })
        .collect();
    let nodes = lattice.iter().product::<usize>();
    let ctrl: Vec<f64> = (0..nodes * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut field = vec![0.0; g.voxel_count() * n];
    for p in 0..g.voxel_count() {
        let c = g.coord3(p);
        let mut lo = [0usize; 3];
        let mut w = [0.0f64; 3];
        for a in 0..3 {
            if lattice[a] > 1 {
                let s = c[a] as f64 / spec.control_spacing;
                lo[a] = (s.floor() as usize).min(lattice[a] - 2);
                w[a] = smooth(s - lo[a] as f64);
            }
        }
        for corner in 0..(1 << n) {
            let mut weight = 1.0;
            let mut node = 0;
            for a in 0..3 {
                let bit = if a < n { (corner >> a) & 1 } else { 0 };
                weight *= if bit == 1 { w[a] } else { 1.0 - w[a] };
                node = node * lattice[a] + lo[a] + bit;
            }
            for comp in 0..n {
                field[p * n + comp] += weight * ctrl[node * n + comp];
            }
        }
    }
    let max_len = field.chunks_exact(n).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let scale = if max_len > 0.0 { spec.amplitude / max_len } else { 0.0 };
    field.iter_mut().for_each(|v| *v *= scale);
    field
}

/// Generates one pair. Retries with fresh draws until the true field does not fold
/// and every structure covers at least 1% of the grid in both label maps.
pub fn generate_pair<T: Real>(spec: &SynthSpec) -> Result<SynthPair<T>> {
    spec.validate()?;
    let g = spec.geom;
    let count = spec.label_count();
    let min_voxels = (g.voxel_count() as f64 * 0.01).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        let labels = draw_labels(spec, &mut rng);
        let intensities: Vec<f64> = {
            let mut v = vec![0.0];
            for k in 1..count {
                let band = 0.25 + 0.75 * k as f64 / (count - 1) as f64;
                v.push((band + rng.random_range(-0.08..0.08)).min(1.0));
            }
            v
        };
        let field = random_field(spec, &mut rng);

        let raw: Vec<f64> = labels.iter().map(|&l| intensities[l as usize]).collect();
        let base = GridImage::new(g, gaussian_blur(g, &raw, spec.blur_sigma))?;
        let u_true = DisplacementField::new(g, field)?;
        if jacobian_report(&u_true, None)?.folding_count > 0 {
            continue;
        }
        let fixed_labels = GridImage::new(g, labels.iter().map(|&l| l as f64).collect())?;
        let moving_labels = warp_labels(&fixed_labels, &u_true, count)?;
        let big_enough = |img: &GridImage<f64>| {
            let mut sizes = vec![0usize; count];
            img.values().iter().for_each(|&v| sizes[v as usize] += 1);
            sizes[1..].iter().all(|&s| s >= min_voxels)
        };
        if !big_enough(&fixed_labels) || !big_enough(&moving_labels) {
            continue;
        }
        let moving = warp_image(&base, &u_true)?;
        let fixed = if spec.noise > 0.0 {
            let normal = Normal::new(0.0, spec.noise).expect("valid deviation");
            GridImage::new(g, base.values().iter().map(|&v| v + normal.sample(&mut rng)).collect())?
        } else {
            base
        };
        return Ok(SynthPair {
            fixed: fixed.cast(),
            moving: moving.cast(),
            fixed_labels: fixed_labels.cast(),
            moving_labels: moving_labels.cast(),
            u_true: u_true.cast(),
        });
    }
    Err(Error::Numerical(format!("no admissible pair after {MAX_ATTEMPTS} attempts; lower the amplitude")))
}

/// `count` pairs with seeds derived from `spec.seed`.
pub fn generate_dataset<T: Real>(spec: &SynthSpec, count: usize) -> Result<Vec<SynthPair<T>>> {
    (0..count as u64).map(|i| generate_pair(&spec.for_pair(i))).collect()
}
