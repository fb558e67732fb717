//! Analytic gradients against central finite differences.

use morphreg::grid::{DisplacementField, FeatureMap, GridGeometry, GridImage, SegmentationMap};
use morphreg::losses::{self, AuxWeight, LossWeights, SimKind};
use morphreg::net::layers::{conv_backward, conv_forward, ConvShape};
use morphreg::net::{NetConfig, NetParams};
use morphreg::optimize::{network_loss_and_grad, LabelChannels};
use morphreg::warp::{warp_backward, warp_image};
use rand::Rng;

use super::*;

pub const INSTANCES: usize = 20;
pub const TOL_F64: f64 = 1e-4;
pub const TOL_F32: f64 = 1e-3;

fn image_from(g: GridGeometry, x: &[f64]) -> GridImage<f64> {
    GridImage::new(g, x.to_vec()).unwrap()
}

fn field_from(g: GridGeometry, x: &[f64]) -> DisplacementField<f64> {
    DisplacementField::new(g, x.to_vec()).unwrap()
}

pub fn mse() -> Check {
    run_instances("mse", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let (f, w) = (random_image(r, g), random_image(r, g));
        let up = r.random_range(0.5..2.0);
        let a = losses::mse_backward(&f, &w, up).unwrap();
        fd_worst(w.values(), a.values(), |x| up * losses::mse(&f, &image_from(g, x)).unwrap())
    })
}

pub fn local_cc() -> Check {
    run_instances("local_cc", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let (f, w) = (random_image(r, g), random_image(r, g));
        let window = [3, 5][i / 2 % 2];
        let a = losses::local_cc_backward(&f, &w, window, 1.0).unwrap();
        fd_worst(w.values(), a.values(), |x| losses::local_cc(&f, &image_from(g, x), window).unwrap())
    })
}

pub fn smoothness() -> Check {
    run_instances("smoothness", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let u = random_field(r, g, 2.0);
        let a = losses::smoothness_backward(&u, 1.0);
        fd_worst(u.vectors(), a.vectors(), |x| losses::smoothness(&field_from(g, x)))
    })
}

pub fn seg_loss() -> Check {
    run_instances("seg_loss", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let k = r.random_range(1..=4);
        let (sf, sw) = (random_soft_seg(r, g, k), random_soft_seg(r, g, k));
        let a = losses::seg_loss_backward(&sf, &sw, 1.0).unwrap();
        fd_worst(sw.weights(), a.weights(), |x| {
            losses::seg_loss(&sf, &SegmentationMap::new(g, k, x.to_vec()).unwrap()).unwrap()
        })
    })
}

pub fn warp_field() -> Check {
    run_instances("warp wrt displacement", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let (m, up) = (random_image(r, g), random_image(r, g));
        let u = warp_safe_field(r, g, 1.5);
        let (_, gu) = warp_backward(&m, &u, &up).unwrap();
        let dot = |w: GridImage<f64>| w.values().iter().zip(up.values()).map(|(a, b)| a * b).sum::<f64>();
        fd_worst(u.vectors(), gu.vectors(), |x| dot(warp_image(&m, &field_from(g, x)).unwrap()))
    })
}

pub fn warp_source() -> Check {
    run_instances("warp wrt source image", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let (m, up) = (random_image(r, g), random_image(r, g));
        let u = random_field(r, g, 2.5);
        let (gm, _) = warp_backward(&m, &u, &up).unwrap();
        let dot = |w: GridImage<f64>| w.values().iter().zip(up.values()).map(|(a, b)| a * b).sum::<f64>();
        fd_worst(m.values(), gm.values(), |x| dot(warp_image(&image_from(g, x), &u).unwrap()))
    })
}

pub fn unsup_loss() -> Check {
    run_instances("unsupervised loss", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let (f, m) = (random_image(r, g), random_image(r, g));
        let u = warp_safe_field(r, g, 1.5);
        let sim = if i % 4 < 2 { SimKind::Mse } else { SimKind::Cc };
        let w = LossWeights { cc_window: 3, ..LossWeights::unsupervised(r.random_range(0.0..1.0)) };
        let (_, grad) = losses::unsup_loss_and_grad(&f, &m, &u, &w, sim).unwrap();
        fd_worst(u.vectors(), grad.vectors(), |x| losses::unsup_loss(&f, &m, &field_from(g, x), &w, sim).unwrap().total)
    })
}

pub fn aux_loss() -> Check {
    run_instances("auxiliary loss", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let (f, m) = (random_image(r, g), random_image(r, g));
        let (sf, sm) = (random_soft_seg(r, g, 3), random_soft_seg(r, g, 3));
        let u = warp_safe_field(r, g, 1.5);
        let gamma = if i % 3 == 2 { AuxWeight::SegOnly } else { AuxWeight::Weight(r.random_range(0.01..1.0)) };
        let w = LossWeights { lambda: 0.1, gamma, cc_window: 3 };
        let sim = if i % 2 == 0 { SimKind::Mse } else { SimKind::Cc };
        let (_, grad) = losses::aux_loss_and_grad(&f, &m, &sf, &sm, &u, &w, sim).unwrap();
        fd_worst(u.vectors(), grad.vectors(), |x| {
            losses::aux_loss(&f, &m, &sf, &sm, &field_from(g, x), &w, sim).unwrap().total
        })
    })
}

pub fn conv() -> Check {
    run_instances("convolution", INSTANCES, TOL_F64, |i, r| {
        let g = small_geom(r, i);
        let shape = ConvShape {
            kernel: 3,
            in_channels: r.random_range(1..=3),
            out_channels: r.random_range(1..=3),
            stride: if g.dims().iter().all(|&d| d >= 4) && i % 4 < 2 { 2 } else { 1 },
        };
        let n = g.ndim();
        let input = FeatureMap::new(g, shape.in_channels, (0..g.voxel_count() * shape.in_channels).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let weight: Vec<f64> = (0..shape.weight_len(n)).map(|_| r.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..shape.out_channels).map(|_| r.random_range(-1.0..1.0)).collect();
        let out = conv_forward(&input, &weight, &bias, &shape).unwrap();
        let up: Vec<f64> = (0..out.data().len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let up_map = FeatureMap::new(out.geom(), shape.out_channels, up.clone()).unwrap();
        let gr = conv_backward(&input, &weight, &bias, &shape, &up_map, true).unwrap();
        let dot = |o: FeatureMap<f64>| o.data().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let e_in = fd_worst(input.data(), gr.input.as_ref().unwrap().data(), |x| {
            dot(conv_forward(&FeatureMap::new(g, shape.in_channels, x.to_vec()).unwrap(), &weight, &bias, &shape).unwrap())
        });
        let e_w = fd_worst(&weight, &gr.weight, |x| dot(conv_forward(&input, x, &bias, &shape).unwrap()));
        let e_b = fd_worst(&bias, &gr.bias, |x| dot(conv_forward(&input, &weight, x, &shape).unwrap()));
        e_in.max(e_w).max(e_b)
    })
}

/// A tiny network whose output displacement sits at fractional offsets, away
/// from the warp's kinks at integer sample positions.
fn tiny_net(r: &mut ChaCha8Rng, instance: usize) -> (GridGeometry, NetParams<f64>) {
    let (g, config) = if instance.is_multiple_of(2) {
        let g = GridGeometry::new(&[8, 8]).unwrap();
        let c = NetConfig { ndim: 2, encoder_filters: vec![3, 4], decoder_filters: vec![4, 3, 3], kernel_size: 3, leaky_slope: 0.2, feature_multiplier: 1 };
        (g, c)
    } else {
        let g = GridGeometry::new(&[6, 6, 6]).unwrap();
        let c = NetConfig { ndim: 3, encoder_filters: vec![2], decoder_filters: vec![3, 2], kernel_size: 3, leaky_slope: 0.2, feature_multiplier: 1 };
        (g, c)
    };
    let mut p = NetParams::<f64>::init(config, r.random()).unwrap();
    let last = p.layers().len() - 1;
    for (li, l) in p.layers_mut().iter_mut().enumerate() {
        if li == last {
            l.weight.iter_mut().for_each(|w| *w *= 3.0);
            for (c, b) in l.bias.iter_mut().enumerate() {
                *b = 0.45 - 0.1 * c as f64;
            }
        } else {
            l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
        }
    }
    (g, p)
}

fn net_case(i: usize, r: &mut ChaCha8Rng) -> (GridGeometry, NetParams<f64>, GridImage<f64>, GridImage<f64>, Option<(SegmentationMap<f64>, SegmentationMap<f64>)>, LossWeights, SimKind) {
    let (g, p) = tiny_net(r, i);
    let (f, m) = (random_image(r, g), random_image(r, g));
    let sim = if i % 4 < 2 { SimKind::Mse } else { SimKind::Cc };
    let (segs, gamma) = if i.is_multiple_of(3) {
        let labels = |r: &mut ChaCha8Rng| GridImage::new(g, (0..g.voxel_count()).map(|_| r.random_range(0..3) as f64).collect()).unwrap();
        let ch = LabelChannels::all(3);
        let (lf, lm) = (labels(r), labels(r));
        (Some((ch.encode(&lf).unwrap(), ch.encode(&lm).unwrap())), AuxWeight::Weight(0.5))
    } else {
        (None, AuxWeight::Weight(0.0))
    };
    let w = LossWeights { lambda: 0.05, gamma, cc_window: 3 };
    (g, p, f, m, segs, w, sim)
}

fn net_loss(p: &NetParams<f64>, f: &GridImage<f64>, m: &GridImage<f64>, segs: &Option<(SegmentationMap<f64>, SegmentationMap<f64>)>, w: &LossWeights, sim: SimKind) -> f64 {
    let u = p.forward(f, m).unwrap();
    match segs {
        Some((sf, sm)) => losses::aux_loss(f, m, sf, sm, &u, w, sim).unwrap().total,
        None => losses::unsup_loss(f, m, &u, w, sim).unwrap().total,
    }
}

pub fn network_f64() -> Check {
    run_instances("network parameters (64-bit)", INSTANCES, TOL_F64, |i, r| {
        let (_, p, f, m, segs, w, sim) = net_case(i, r);
        let seg_refs = segs.as_ref().map(|(a, b)| (a, b));
        let (_, grad) = network_loss_and_grad(&p, &f, &m, seg_refs, &w, sim).unwrap();
        let mut probe = p.clone();
        fd_worst(&p.flatten(), &grad, |x| {
            probe.assign_flat(x).unwrap();
            net_loss(&probe, &f, &m, &segs, &w, sim)
        })
    })
}

/// The 32-bit backward pass against 64-bit finite differences of the same network.
pub fn network_f32() -> Check {
    run_instances("network parameters (32-bit end-to-end)", INSTANCES, TOL_F32, |i, r| {
        let (_, p, f, m, segs, w, sim) = net_case(i, r);
        let p32: NetParams<f32> = p.cast();
        let segs32 = segs.as_ref().map(|(a, b)| (a.cast::<f32>(), b.cast::<f32>()));
        let (_, grad32) = network_loss_and_grad(&p32, &f.cast(), &m.cast(), segs32.as_ref().map(|(a, b)| (a, b)), &w, sim).unwrap();
        let grad: Vec<f64> = grad32.iter().map(|&v| v as f64).collect();
        // evaluate the reference at the f32-rounded parameters
        let p64: NetParams<f64> = p32.cast();
        let mut probe = p64.clone();
        fd_worst(&p64.flatten(), &grad, |x| {
            probe.assign_flat(x).unwrap();
            net_loss(&probe, &f, &m, &segs, &w, sim)
        })
    })
}

pub fn all() -> Vec<Check> {
    vec![mse(), local_cc(), smoothness(), seg_loss(), warp_field(), warp_source(), unsup_loss(), aux_loss(), conv(), network_f64(), network_f32()]
}
