//! Check routines shared by the integration tests and the acceptance suite.
//! Each returns `Ok(summary)` or `Err(reason)` instead of panicking so callers
//! can either assert or report.

#![allow(dead_code)]

pub mod formats;
pub mod gradients;
pub mod identities;
pub mod oracles;

use morphreg::grid::{DisplacementField, GridGeometry, GridImage, SegmentationMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random geometry: 2D up to 8x8 on even seeds, 3D up to 6x6x6 on odd ones.
pub fn small_geom(rng: &mut ChaCha8Rng, instance: usize) -> GridGeometry {
    if instance.is_multiple_of(2) {
        GridGeometry::new(&[rng.random_range(3..=8), rng.random_range(3..=8)]).unwrap()
    } else {
        GridGeometry::new(&[rng.random_range(3..=6), rng.random_range(3..=6), rng.random_range(3..=6)]).unwrap()
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, g: GridGeometry) -> GridImage<f64> {
    GridImage::new(g, (0..g.voxel_count()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, g: GridGeometry, amp: f64) -> DisplacementField<f64> {
    DisplacementField::new(g, (0..g.voxel_count() * g.ndim()).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
}

/// A field whose sample points stay away from integer coordinates and the grid
/// border, where the n-linear warp is not differentiable.
pub fn warp_safe_field(rng: &mut ChaCha8Rng, g: GridGeometry, amp: f64) -> DisplacementField<f64> {
    let n = g.ndim();
    let mut v = Vec::with_capacity(g.voxel_count() * n);
    for p in 0..g.voxel_count() {
        let c = g.coord(p);
        for a in 0..n {
            let hi = (g.dims()[a] - 1) as f64;
            loop {
                let d: f64 = rng.random_range(-amp..amp);
                let s = c[a] as f64 + d;
                let frac = s - s.floor();
                if s > 0.05 && s < hi - 0.05 && frac > 0.05 && frac < 0.95 {
                    v.push(d);
                    break;
                }
            }
        }
    }
    DisplacementField::new(g, v).unwrap()
}

pub fn random_soft_seg(rng: &mut ChaCha8Rng, g: GridGeometry, k: usize) -> SegmentationMap<f64> {
    SegmentationMap::new(g, k, (0..g.voxel_count() * k).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap()
}

pub const FD_STEP: f64 = 1e-4;
/// Smaller steps tried for components that miss at [`FD_STEP`].
const FD_REFINE: [f64; 3] = [1e-5, 1e-6, 1e-7];

fn central(x: &mut [f64], i: usize, h: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let x0 = x[i];
    x[i] = x0 + h;
    let up = f(x);
    x[i] = x0 - h;
    let down = f(x);
    x[i] = x0;
    (up - down) / (2.0 * h)
}

/// Worst relative error between `analytic` and central differences of `f` at `x0`.
///
/// Each component's error is divided by `max(|a|, |n|, 1e-3 * max|n|)`: tiny
/// components are compared against the gradient's overall scale instead of
/// their own, where finite differences carry no relative precision.
///
/// The objectives are piecewise smooth (leaky rectifier, n-linear warp). A step
/// that straddles a kink biases the difference, so a component that misses at
/// the default step is retried with smaller ones; a wrong gradient misses at
/// every step.
pub fn fd_worst(x0: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    let numeric: Vec<f64> = (0..x.len()).map(|i| central(&mut x, i, FD_STEP, &mut f)).collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale).max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut e = rel(analytic[i], numeric[i]);
        for h in FD_REFINE {
            if e <= 1e-5 {
                break;
            }
            e = e.min(rel(analytic[i], central(&mut x, i, h, &mut f)));
        }
        worst = worst.max(e);
    }
    worst
}

/// Runs `instances` seeded cases and fails if any worst error exceeds `tol`.
pub fn run_instances(name: &str, instances: usize, tol: f64, mut case: impl FnMut(usize, &mut ChaCha8Rng) -> f64) -> Check {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut r = rng(0x5eed_0000 + i as u64 * 7919 + name.len() as u64);
        let e = case(i, &mut r);
        if !(e <= tol) {
            return Err(format!("{name}: instance {i} relative error {e:.3e} > {tol:.0e}"));
        }
        worst = worst.max(e);
    }
    Ok(format!("{name}: {instances} instances, worst relative error {worst:.2e}"))
}
