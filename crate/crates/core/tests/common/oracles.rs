//! Library results against direct nested-loop evaluations of the definitions.

use morphreg::eval::{dice_eval, jacobian_determinant};
use morphreg::grid::{DisplacementField, FeatureMap, GridGeometry, GridImage};
use morphreg::losses;
use morphreg::net::layers::{conv_forward, ConvShape};
use rand::Rng;

use super::*;

pub const TOL: f64 = 1e-10;

/// Coordinates padded to three axes, for loops that treat 2D as depth-1 3D.
fn dims3(g: GridGeometry) -> [usize; 3] {
    let d = g.dims();
    if d.len() == 2 {
        [d[0], d[1], 1]
    } else {
        [d[0], d[1], d[2]]
    }
}

fn flat(g: GridGeometry, z: usize, y: usize, x: usize) -> usize {
    let [_, d1, d2] = dims3(g);
    (z * d1 + y) * d2 + x
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn compare(name: &str, mut case: impl FnMut(usize, &mut ChaCha8Rng) -> f64) -> Check {
    let mut worst = 0.0f64;
    for i in 0..20 {
        let mut r = rng(0x0ac1e + 31 * i as u64 + name.len() as u64);
        let e = case(i, &mut r);
        if !(e <= TOL) {
            return Err(format!("{name}: instance {i} differs from the oracle by {e:.3e}"));
        }
        worst = worst.max(e);
    }
    Ok(format!("{name}: 20 instances, worst deviation {worst:.1e}"))
}

pub fn mse() -> Check {
    compare("MSE", |i, r| {
        let g = small_geom(r, i);
        let (f, w) = (random_image(r, g), random_image(r, g));
        let [d0, d1, d2] = dims3(g);
        let mut sum = 0.0;
        for z in 0..d0 {
            for y in 0..d1 {
                for x in 0..d2 {
                    let p = flat(g, z, y, x);
                    sum += (f.values()[p] - w.values()[p]).powi(2);
                }
            }
        }
        rel(losses::mse(&f, &w).unwrap(), sum / (d0 * d1 * d2) as f64)
    })
}

pub fn local_cc() -> Check {
    compare("local CC", |i, r| {
        let g = small_geom(r, i);
        let (f, w) = (random_image(r, g), random_image(r, g));
        let window = [3, 5, 7][i % 3];
        let rad = (window / 2) as isize;
        let [d0, d1, d2] = dims3(g);
        let ndim = g.ndim();
        let mut total = 0.0;
        for z in 0..d0 {
            for y in 0..d1 {
                for x in 0..d2 {
                    // clamped window: neighbours inside the grid only
                    let mut idx = Vec::new();
                    for dz in -rad..=rad {
                        for dy in -rad..=rad {
                            for dx in -rad..=rad {
                                if ndim == 2 && dx != 0 {
                                    continue;
                                }
                                let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                                if zz < 0 || yy < 0 || xx < 0 || zz >= d0 as isize || yy >= d1 as isize || xx >= d2 as isize {
                                    continue;
                                }
                                idx.push(flat(g, zz as usize, yy as usize, xx as usize));
                            }
                        }
                    }
                    let n = idx.len() as f64;
                    let mf = idx.iter().map(|&q| f.values()[q]).sum::<f64>() / n;
                    let mw = idx.iter().map(|&q| w.values()[q]).sum::<f64>() / n;
                    let (mut c, mut vf, mut vw) = (0.0, 0.0, 0.0);
                    for &q in &idx {
                        let (a, b) = (f.values()[q] - mf, w.values()[q] - mw);
                        c += a * b;
                        vf += a * a;
                        vw += b * b;
                    }
                    total += c * c / (vf * vw + losses::LOSS_EPSILON);
                }
            }
        }
        rel(losses::local_cc(&f, &w, window).unwrap(), total)
    })
}

pub fn smoothness() -> Check {
    compare("smoothness", |i, r| {
        let g = small_geom(r, i);
        let u = random_field(r, g, 3.0);
        let n = g.ndim();
        let [d0, d1, d2] = dims3(g);
        let v = |z, y, x, c| u.vectors()[flat(g, z, y, x) * n + c];
        let mut sum = 0.0;
        for z in 0..d0 {
            for y in 0..d1 {
                for x in 0..d2 {
                    for c in 0..n {
                        if z + 1 < d0 {
                            sum += (v(z + 1, y, x, c) - v(z, y, x, c)).powi(2);
                        }
                        if y + 1 < d1 {
                            sum += (v(z, y + 1, x, c) - v(z, y, x, c)).powi(2);
                        }
                        if x + 1 < d2 {
                            sum += (v(z, y, x + 1, c) - v(z, y, x, c)).powi(2);
                        }
                    }
                }
            }
        }
        rel(losses::smoothness(&u), sum)
    })
}

pub fn conv() -> Check {
    compare("convolution", |i, r| {
        let g = small_geom(r, i);
        let n = g.ndim();
        let stride = if g.dims().iter().all(|&d| d >= 4) && i % 3 == 0 { 2 } else { 1 };
        let k = if i % 5 == 4 { 5 } else { 3 };
        let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
        let shape = ConvShape { kernel: k, in_channels: ci, out_channels: co, stride };
        let input = FeatureMap::new(g, ci, (0..g.voxel_count() * ci).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let weight: Vec<f64> = (0..shape.weight_len(n)).map(|_| r.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..co).map(|_| r.random_range(-1.0..1.0)).collect();
        let out = conv_forward(&input, &weight, &bias, &shape).unwrap();

        let [d0, d1, d2] = dims3(g);
        let half = (k / 2) as isize;
        let out_dims: Vec<usize> = g.dims().iter().map(|&d| d.div_ceil(stride)).collect();
        let og = GridGeometry::new(&out_dims).unwrap();
        let [o0, o1, o2] = dims3(og);
        // kernel extent along each padded axis; 2D kernels are flat in the last slot
        let kz = k as isize;
        let (ky, kx) = if n == 2 { (k as isize, 1) } else { (k as isize, k as isize) };
        let mut worst = 0.0f64;
        for z in 0..o0 {
            for y in 0..o1 {
                for x in 0..o2 {
                    for oc in 0..co {
                        let mut acc = bias[oc];
                        for a in 0..kz {
                            for b in 0..ky {
                                for c in 0..kx {
                                    let (zz, yy, xx) = if n == 2 {
                                        ((z * stride) as isize + a - half, (y * stride) as isize + b - half, 0)
                                    } else {
                                        ((z * stride) as isize + a - half, (y * stride) as isize + b - half, (x * stride) as isize + c - half)
                                    };
                                    if zz < 0 || yy < 0 || xx < 0 || zz >= d0 as isize || yy >= d1 as isize || xx >= d2 as isize {
                                        continue;
                                    }
                                    let tap = ((a * ky + b) * kx + c) as usize;
                                    let q = flat(g, zz as usize, yy as usize, xx as usize);
                                    for ic in 0..ci {
                                        acc += input.data()[q * ci + ic] * weight[(tap * ci + ic) * co + oc];
                                    }
                                }
                            }
                        }
                        worst = worst.max(rel(out.data()[flat(og, z, y, x) * co + oc], acc));
                    }
                }
            }
        }
        worst
    })
}

/// Determinant by Laplace expansion along the first row.
fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    if m.len() == 1 {
        return m[0][0];
    }
    (0..m.len())
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..].iter().map(|row| row.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &v)| v).collect()).collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * cofactor_det(&minor)
        })
        .sum()
}

pub fn jacobian() -> Check {
    compare("Jacobian determinant", |i, r| {
        let g = small_geom(r, i);
        let n = g.ndim();
        let u = random_field(r, g, 0.8);
        let det = jacobian_determinant(&u);
        let mut worst = 0.0f64;
        for p in 0..g.voxel_count() {
            let c = g.coord(p);
            let mut j = vec![vec![0.0; n]; n];
            for a in 0..n {
                let at = |x: usize| {
                    let mut cc = c.clone();
                    cc[a] = x;
                    u.vector(g.index(&cc)).to_vec()
                };
                let last = g.dims()[a] - 1;
                let (lo, hi, h) = if c[a] == 0 { (0, 1, 1.0) } else if c[a] == last { (last - 1, last, 1.0) } else { (c[a] - 1, c[a] + 1, 2.0) };
                let (ul, uh) = (at(lo), at(hi));
                for comp in 0..n {
                    j[comp][a] = (uh[comp] - ul[comp]) / h + if comp == a { 1.0 } else { 0.0 };
                }
            }
            worst = worst.max(rel(det.values()[p], cofactor_det(&j)));
        }
        worst
    })
}

/// Hard Dice under an integer shift against directly shifted masks.
pub fn dice_shift() -> Check {
    compare("Dice under integer shifts", |_, r| {
        let g = GridGeometry::new(&[r.random_range(6..=10), r.random_range(6..=10)]).unwrap();
        let count = 3;
        let fixed = GridImage::new(g, (0..g.voxel_count()).map(|_| r.random_range(0..count) as f64).collect()).unwrap();
        let moving = GridImage::new(g, (0..g.voxel_count()).map(|_| r.random_range(0..count) as f64).collect()).unwrap();
        let (sy, sx) = (r.random_range(-2i64..=2), r.random_range(-2i64..=2));
        let u = DisplacementField::from_fn(g, |_| vec![sy as f64, sx as f64]).unwrap();
        let got = dice_eval(&fixed, &moving, &u, count).unwrap();
        let (h, w) = (g.dims()[0] as i64, g.dims()[1] as i64);
        let mut worst = 0.0f64;
        for k in 1..count {
            let (mut both, mut a, mut b) = (0, 0, 0);
            for y in 0..h {
                for x in 0..w {
                    // out-of-grid samples clamp to the border
                    let (my, mx) = ((y + sy).clamp(0, h - 1), (x + sx).clamp(0, w - 1));
                    let fk = fixed.values()[(y * w + x) as usize] == k as f64;
                    let mk = moving.values()[(my * w + mx) as usize] == k as f64;
                    a += fk as usize;
                    b += mk as usize;
                    both += (fk && mk) as usize;
                }
            }
            let expect = if a + b == 0 { None } else { Some(2.0 * both as f64 / (a + b) as f64) };
            worst = worst.max(match (got.per_label[k], expect) {
                (Some(x), Some(y)) => rel(x, y),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            });
        }
        worst
    })
}

pub fn all() -> Vec<Check> {
    vec![mse(), local_cc(), smoothness(), conv(), jacobian(), dice_shift()]
}
