//! Exact (or epsilon-bounded) identities of the registration primitives.

use morphreg::eval::{dice_eval, jacobian_report};
use morphreg::grid::{identity_displacement, onehot_from_labels, DisplacementField, GridGeometry, GridImage};
use morphreg::losses::{self, LOSS_EPSILON};
use morphreg::warp::{warp_image, warp_map};
use morphreg::FeatureMap;
use rand::Rng;

use super::*;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn warp_identity() -> Check {
    for i in 0..20 {
        let mut r = rng(100 + i as u64);
        let g = small_geom(&mut r, i);
        let m = random_image(&mut r, g);
        let id = identity_displacement(g);
        ensure(warp_image(&m, &id).unwrap() == m, || format!("64-bit identity warp changed instance {i}"))?;
        let m32 = m.cast::<f32>();
        ensure(warp_image(&m32, &id.cast()).unwrap() == m32, || format!("32-bit identity warp changed instance {i}"))?;
        let multi = FeatureMap::new(g, 3, (0..g.voxel_count() * 3).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        ensure(warp_map(&multi, &id).unwrap() == multi, || format!("multi-channel identity warp changed instance {i}"))?;
    }
    Ok("warp by u = 0 is bit-exact (20 instances, 32- and 64-bit)".into())
}

pub fn partition_of_unity() -> Check {
    let mut worst = 0.0f64;
    for i in 0..20 {
        let mut r = rng(200 + i as u64);
        let g = small_geom(&mut r, i);
        let c = r.random_range(-5.0..5.0);
        let m = GridImage::new(g, vec![c; g.voxel_count()]).unwrap();
        // displacements large enough to leave the grid exercise clamping too
        let u = random_field(&mut r, g, 6.0);
        for &v in warp_image(&m, &u).unwrap().values() {
            worst = worst.max((v - c).abs() / c.abs());
        }
    }
    ensure(worst <= 1e-14, || format!("constant image not preserved: relative deviation {worst:.2e}"))?;
    Ok(format!("constant images preserved by warping, worst relative deviation {worst:.1e}"))
}

pub fn mse_self() -> Check {
    for i in 0..20 {
        let mut r = rng(300 + i as u64);
        let g = small_geom(&mut r, i);
        let f = random_image(&mut r, g);
        ensure(losses::mse(&f, &f).unwrap() == 0.0, || format!("MSE(f, f) != 0 on instance {i}"))?;
    }
    Ok("MSE(f, f) = 0 exactly".into())
}

/// Every term is `v² / (v² + ε)` for self-registration, so `1 - term ≤ ε / v²`.
pub fn cc_self_and_affine() -> Check {
    let mut worst = 0.0f64;
    for i in 0..20 {
        let mut r = rng(400 + i as u64);
        let g = if i % 2 == 0 { GridGeometry::new(&[12, 12]).unwrap() } else { GridGeometry::new(&[6, 6, 6]).unwrap() };
        let f = random_image(&mut r, g);
        let (a, b) = (r.random_range(0.5..3.0) * if i % 3 == 0 { -1.0 } else { 1.0 }, r.random_range(-2.0..2.0));
        let affine = GridImage::new(g, f.values().iter().map(|v| a * v + b).collect()).unwrap();
        for w in [&f, &affine] {
            let terms = losses::local_cc_terms(&f, w, 5).unwrap();
            for &t in terms.values() {
                worst = worst.max((1.0 - t).abs());
            }
        }
    }
    ensure(worst < 1e-4, || format!("local CC terms deviate from 1 by {worst:.2e}"))?;
    Ok(format!("local CC terms = 1 for self and affine intensity maps, worst deviation {worst:.1e} (epsilon {LOSS_EPSILON:.0e})"))
}

pub fn smoothness_constant() -> Check {
    for i in 0..20 {
        let mut r = rng(500 + i as u64);
        let g = small_geom(&mut r, i);
        let v: Vec<f64> = (0..g.ndim()).map(|_| r.random_range(-3.0..3.0)).collect();
        let u = DisplacementField::from_fn(g, |_| v.clone()).unwrap();
        ensure(losses::smoothness(&u) == 0.0, || format!("smoothness of a constant field != 0 on instance {i}"))?;
    }
    Ok("smoothness of constant fields = 0 exactly".into())
}

pub fn dice_identical_disjoint() -> Check {
    let g = GridGeometry::new(&[8, 8]).unwrap();
    let labels = GridImage::from_fn(g, |c| ((c[0] / 3 + c[1] / 4) % 3) as f64).unwrap();
    let shifted = GridImage::from_fn(g, |c| ((c[0] / 3 + c[1] / 4 + 1) % 3) as f64).unwrap();
    let hard_same = dice_eval(&labels, &labels, &identity_displacement(g), 3).unwrap();
    ensure(hard_same.per_label.iter().all(|d| *d == Some(1.0)), || format!("hard Dice of identical maps {:?}", hard_same.per_label))?;
    // label k of `labels` occupies exactly label k+1's voxels of `shifted`: every structure disjoint
    let hard_disjoint = dice_eval(&labels, &shifted, &identity_displacement(g), 3).unwrap();
    ensure(hard_disjoint.per_label.iter().all(|d| *d == Some(0.0)), || format!("hard Dice of disjoint maps {:?}", hard_disjoint.per_label))?;
    let (a, b) = (onehot_from_labels(&labels, 3).unwrap(), onehot_from_labels(&shifted, 3).unwrap());
    let soft_same = losses::soft_dice(&a, &a).unwrap();
    ensure(soft_same.iter().all(|d| (1.0 - d).abs() < 1e-6), || format!("soft Dice of identical maps {soft_same:?}"))?;
    let soft_disjoint = losses::soft_dice(&a, &b).unwrap();
    ensure(soft_disjoint.iter().all(|&d| d == 0.0), || format!("soft Dice of disjoint maps {soft_disjoint:?}"))?;
    Ok("Dice of identical / disjoint one-hot maps = 1 / 0 (hard exact, soft within 1e-6)".into())
}

pub fn jacobian_trivial_fields() -> Check {
    for i in 0..20 {
        let mut r = rng(600 + i as u64);
        let g = small_geom(&mut r, i);
        let v: Vec<f64> = if i % 4 == 0 { vec![0.0; g.ndim()] } else { (0..g.ndim()).map(|_| r.random_range(-3.0..3.0)).collect() };
        let u = DisplacementField::from_fn(g, |_| v.clone()).unwrap();
        let rep = jacobian_report(&u, None).unwrap();
        ensure(rep.det_field.values().iter().all(|&d| d == 1.0) && rep.folding_count == 0, || {
            format!("det != 1 or folding for constant field {v:?}")
        })?;
    }
    Ok("zero and constant fields: det = 1 everywhere, no folding".into())
}

pub fn jacobian_reversal() -> Check {
    for i in 0..20 {
        let mut r = rng(700 + i as u64);
        let g = small_geom(&mut r, i);
        let axis = r.random_range(0..g.ndim());
        let u = DisplacementField::from_fn(g, |c| (0..g.ndim()).map(|a| if a == axis { -2.0 * c[a] as f64 } else { 0.0 }).collect()).unwrap();
        let rep = jacobian_report(&u, None).unwrap();
        for p in 0..g.voxel_count() {
            let c = g.coord(p);
            let interior = c.iter().zip(g.dims()).all(|(&x, &d)| x > 0 && x + 1 < d);
            if interior && rep.det_field.values()[p] != -1.0 {
                return Err(format!("u_{axis} = -2 x_{axis}: det {} at {c:?}", rep.det_field.values()[p]));
            }
        }
        ensure(rep.folding_fraction == 1.0, || format!("folding fraction {}", rep.folding_fraction))?;
    }
    Ok("u_x = -2x: det = -1 and folding at every interior voxel".into())
}

pub fn all() -> Vec<Check> {
    vec![
        warp_identity(),
        partition_of_unity(),
        mse_self(),
        cc_self_and_affine(),
        smoothness_constant(),
        dice_identical_disjoint(),
        jacobian_trivial_fields(),
        jacobian_reversal(),
    ]
}
