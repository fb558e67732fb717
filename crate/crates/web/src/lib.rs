//! Browser demo: generate a synthetic pair, register it, inspect the Jacobian.
//!
//! Everything runs in `f32` on a square 2D grid; canvases receive RGBA bytes.

use morphreg::data_io::{generate_pair, SynthPair, SynthSpec};
use morphreg::eval::{dice_eval, foreground_mask, jacobian_determinant, jacobian_report};
use morphreg::grid::{identity_displacement, DisplacementField, GridGeometry, GridImage};
use morphreg::optimize::{optimize_instance, DEFAULT_INSTANCE_LR};
use morphreg::warp::warp_image;
use morphreg::{LossWeights, SimKind};
use wasm_bindgen::prelude::*;

const MAX_SIZE: usize = 256;

#[wasm_bindgen]
pub struct Demo {
    pair: SynthPair<f32>,
    label_count: usize,
    field: DisplacementField<f32>,
    trace: Vec<f64>,
}

impl Demo {
    pub fn try_new(size: usize, amplitude: f64, seed: u64) -> morphreg::Result<Demo> {
        if size > MAX_SIZE {
            return Err(morphreg::Error::Config(format!("size is limited to {MAX_SIZE}")));
        }
        let geom = GridGeometry::new(&[size, size])?;
        let spec = SynthSpec { amplitude, ..SynthSpec::new(geom, seed) };
        spec.validate()?;
        let pair = generate_pair(&spec)?;
        Ok(Demo { pair, label_count: spec.label_count(), field: identity_displacement(geom), trace: Vec::new() })
    }

    pub fn try_register(&mut self, lambda: f64, iterations: usize) -> morphreg::Result<f64> {
        let w = LossWeights::unsupervised(lambda);
        let zero = identity_displacement(self.pair.fixed.geom());
        let p = &self.pair;
        let r = optimize_instance(&p.fixed, &p.moving, &zero, &w, SimKind::Mse, iterations, DEFAULT_INSTANCE_LR)?;
        self.field = r.field;
        self.trace = r.trace;
        Ok(r.best_loss.total as f64)
    }

    fn dice(&self, u: &DisplacementField<f32>) -> f64 {
        let p = &self.pair;
        dice_eval(&p.fixed_labels, &p.moving_labels, u, self.label_count).ok().and_then(|d| d.mean).unwrap_or(f64::NAN)
    }
}

fn gray(img: &GridImage<f32>) -> Vec<u8> {
    let (lo, hi) = img.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.values()
        .iter()
        .flat_map(|&v| {
            let g = (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// det = 1 is white, expansion blue, contraction orange, folding solid red.
pub fn jacobian_colors(det: &[f32]) -> Vec<u8> {
    det.iter()
        .flat_map(|&d| {
            if !(d > 0.0) {
                return [220, 20, 30, 255];
            }
            let t = d.ln().clamp(-1.0, 1.0);
            let fade = |c: f32, s: f32| (255.0 - (255.0 - c) * s).round() as u8;
            if t >= 0.0 {
                [fade(40.0, t), fade(90.0, t), fade(220.0, t), 255]
            } else {
                [fade(240.0, -t), fade(150.0, -t), fade(30.0, -t), 255]
            }
        })
        .collect()
}

#[wasm_bindgen]
impl Demo {
    /// A new synthetic pair; `size` must be at least 8.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, amplitude: f64, seed: u32) -> Result<Demo, JsError> {
        Demo::try_new(size, amplitude, seed as u64).map_err(|e| JsError::new(&e.to_string()))
    }

    /// Registers the pair from scratch and returns the final loss.
    pub fn register(&mut self, lambda: f64, iterations: usize) -> Result<f64, JsError> {
        self.try_register(lambda, iterations).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn size(&self) -> usize {
        self.pair.fixed.geom().dims()[0]
    }

    pub fn fixed_rgba(&self) -> Vec<u8> {
        gray(&self.pair.fixed)
    }

    pub fn moving_rgba(&self) -> Vec<u8> {
        gray(&self.pair.moving)
    }

    pub fn warped_rgba(&self) -> Vec<u8> {
        gray(&warp_image(&self.pair.moving, &self.field).expect("field matches the pair"))
    }

    pub fn jacobian_rgba(&self) -> Vec<u8> {
        jacobian_colors(jacobian_determinant(&self.field).values())
    }

    /// Fraction of foreground voxels where the current field folds.
    pub fn folding_fraction(&self) -> f64 {
        let mask = foreground_mask(&self.pair.fixed_labels);
        jacobian_report(&self.field, Some(&mask)).map_or(f64::NAN, |r| r.folding_fraction)
    }

    pub fn dice_before(&self) -> f64 {
        self.dice(&identity_displacement(self.pair.fixed.geom()))
    }

    pub fn dice_after(&self) -> f64 {
        self.dice(&self.field)
    }

    /// Loss after each optimization step of the last registration.
    pub fn loss_trace(&self) -> Vec<f64> {
        self.trace.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_improves_overlap() {
        let mut d = Demo::try_new(64, 8.0, 3).unwrap();
        assert_eq!(d.dice_after(), d.dice_before());
        let loss = d.try_register(0.02, 60).unwrap();
        assert!(loss <= d.loss_trace()[0]);
        assert!(d.dice_after() > d.dice_before());
        assert!(d.folding_fraction() < 0.01);
    }

    #[test]
    fn buffers_are_rgba_sized() {
        let d = Demo::try_new(32, 4.0, 1).unwrap();
        for buf in [d.fixed_rgba(), d.moving_rgba(), d.warped_rgba(), d.jacobian_rgba()] {
            assert_eq!(buf.len(), 32 * 32 * 4);
        }
        assert!(d.jacobian_rgba().chunks(4).all(|c| c == [255, 255, 255, 255]));
    }

    #[test]
    fn folding_is_red() {
        assert_eq!(jacobian_colors(&[-0.5, 0.0, 1.0]), [220, 20, 30, 255, 220, 20, 30, 255, 255, 255, 255, 255]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Demo::try_new(1, 8.0, 0).is_err());
        assert!(Demo::try_new(4096, 8.0, 0).is_err());
    }
}
