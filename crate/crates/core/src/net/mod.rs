//! The amortized registration function: an encoder/decoder CNN with skip
//! connections mapping a (fixed, moving) pair to a displacement field.
//!
//! Architecture, for an encoder of depth `d`:
//!
//! - input: moving and fixed image concatenated into two channels (moving first);
//! - encoder: `d` stride-2 convolutions, each followed by a leaky rectifier;
//! - decoder: for each of the first `d` decoder widths, a stride-1 convolution
//!   and leaky rectifier, a 2x upsampling, and concatenation with the encoder
//!   features (or the input pair) at the new resolution;
//! - the remaining decoder widths are full-resolution convolutions;
//! - a final stride-1 convolution with one output channel per spatial axis and
//!   no activation produces the displacement in voxels.

pub mod io;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, GridGeometry, GridImage};
use crate::real::Real;
use crate::tape::{NodeId, Tape, Value};
use layers::ConvShape;

/// Largest channel count of any layer (after the feature multiplier).
pub const MAX_WIDTH: usize = 4096;

/// Scale applied to the initial weights of the displacement layer.
pub const FLOW_INIT_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub ndim: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    pub feature_multiplier: usize,
}

impl NetConfig {
    /// Small network for 2D inputs whose extents are multiples of 8.
    pub fn desk(ndim: usize) -> Self {
        NetConfig {
            ndim,
            encoder_filters: vec![8, 16, 16],
            decoder_filters: vec![16, 16, 16, 8, 8],
            kernel_size: 3,
            leaky_slope: 0.2,
            feature_multiplier: 1,
        }
    }

    /// Widths of the published 3D network (coarsest level at 1/16 resolution).
    pub fn paper_scale(ndim: usize) -> Self {
        NetConfig {
            ndim,
            encoder_filters: vec![16, 32, 32, 32],
            decoder_filters: vec![32, 32, 32, 32, 32, 16, 16],
            kernel_size: 3,
            leaky_slope: 0.2,
            feature_multiplier: 1,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_filters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ndim != 2 && self.ndim != 3 {
            return Err(Error::Config(format!("network dimension must be 2 or 3, got {}", self.ndim)));
        }
        if self.encoder_filters.is_empty() {
            return Err(Error::Config("the encoder needs at least one level".into()));
        }
        if self.decoder_filters.len() < self.depth() {
            return Err(Error::Config(format!(
                "{} decoder widths given, need at least one per encoder level ({})",
                self.decoder_filters.len(),
                self.depth()
            )));
        }
        if self.encoder_filters.iter().chain(&self.decoder_filters).any(|&f| f == 0) || self.feature_multiplier == 0 {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        if self.encoder_filters.iter().chain(&self.decoder_filters).any(|&f| f * self.feature_multiplier.min(MAX_WIDTH) > MAX_WIDTH)
            || self.feature_multiplier > MAX_WIDTH
            || self.depth() > 8
        {
            return Err(Error::Config(format!("layer widths are limited to {MAX_WIDTH} and depth to 8")));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size > 15 {
            return Err(Error::Config(format!("kernel size must be odd and at most 15, got {}", self.kernel_size)));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return Err(Error::Config(format!("leaky slope must be non-negative, got {}", self.leaky_slope)));
        }
        Ok(())
    }

    /// Checks that the geometry halves exactly `depth` times and stays at least 2 per axis.
    pub fn check_geometry(&self, geom: GridGeometry) -> Result<()> {
        if geom.ndim() != self.ndim {
            return Err(Error::Config(format!("network is {}D but inputs are {}D", self.ndim, geom.ndim())));
        }
        let factor = 1usize << self.depth();
        for &d in geom.dims() {
            if d % factor != 0 || d / factor < 2 {
                return Err(Error::Config(format!(
                    "extent {d} must be divisible by 2^{} = {factor} with at least 2 voxels at the coarsest level",
                    self.depth()
                )));
            }
        }
        Ok(())
    }

    /// Shapes of every convolution in execution order (encoder, decoder, displacement layer).
    pub fn layer_shapes(&self) -> Vec<ConvShape> {
        let mult = self.feature_multiplier;
        let k = self.kernel_size;
        let conv = |i, o, s| ConvShape { kernel: k, in_channels: i, out_channels: o, stride: s };
        let enc: Vec<usize> = self.encoder_filters.iter().map(|f| f * mult).collect();
        let dec: Vec<usize> = self.decoder_filters.iter().map(|f| f * mult).collect();
        let depth = enc.len();
        let mut shapes = Vec::new();
        let mut ch = 2;
        for &e in &enc {
            shapes.push(conv(ch, e, 2));
            ch = e;
        }
        for (j, &w) in dec.iter().enumerate() {
            shapes.push(conv(ch, w, 1));
            ch = w;
            if j < depth {
                // skip from the level this upsample lands on
                ch += if j + 1 < depth { enc[depth - 2 - j] } else { 2 };
            }
        }
        shapes.push(conv(ch, self.ndim, 1));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub shape: ConvShape,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    config: NetConfig,
    layers: Vec<ConvParams<T>>,
}

impl<T: Real> NetParams<T> {
    /// Fan-in scaled uniform initialization; the displacement layer is scaled by
    /// [`FLOW_INIT_SCALE`] so the initial output is close to the identity map.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let slope = config.leaky_slope;
        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let fan_in = (shape.taps(config.ndim) * shape.in_channels) as f64;
                let mut bound = (6.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
                if i == last {
                    bound *= FLOW_INIT_SCALE;
                }
                let weight = (0..shape.weight_len(config.ndim)).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
                ConvParams { shape, weight, bias: vec![T::zero(); shape.out_channels] }
            })
            .collect();
        Ok(NetParams { config, layers })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let ndim = config.ndim;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|shape| ConvParams { shape, weight: vec![T::zero(); shape.weight_len(ndim)], bias: vec![T::zero(); shape.out_channels] })
            .collect();
        Ok(NetParams { config, layers })
    }

    /// Assembles parameters from explicit layers, checking them against the configuration.
    pub fn from_layers(config: NetConfig, layers: Vec<ConvParams<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!("expected {} layers, got {}", shapes.len(), layers.len())));
        }
        for (i, (s, l)) in shapes.iter().zip(&layers).enumerate() {
            if *s != l.shape || l.weight.len() != s.weight_len(config.ndim) || l.bias.len() != s.out_channels {
                return Err(Error::ShapeMismatch(format!("layer {i} does not match the configuration")));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("layer {i} holds non-finite parameters")));
            }
        }
        Ok(NetParams { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer (weights then biases).
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&flat[at..at + w]);
            l.bias.copy_from_slice(&flat[at + w..at + w + b]);
            at += w + b;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        let cast = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        NetParams {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvParams { shape: l.shape, weight: cast(&l.weight), bias: cast(&l.bias) })
                .collect(),
        }
    }

    /// Registers every layer's weight and bias on the tape, as parameters or constants.
    pub fn record(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<(NodeId, NodeId)> {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = (Value::Flat(l.weight.clone()), Value::Flat(l.bias.clone()));
                if trainable {
                    (tape.parameter(w), tape.parameter(b))
                } else {
                    (tape.constant(w), tape.constant(b))
                }
            })
            .collect()
    }

    /// Records the network on `tape`; returns the node holding the displacement field.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        nodes: &[(NodeId, NodeId)],
        fixed: &GridImage<T>,
        moving: &GridImage<T>,
    ) -> Result<NodeId> {
        if fixed.geom() != moving.geom() {
            return Err(Error::GeometryMismatch { left: fixed.geom().dims().to_vec(), right: moving.geom().dims().to_vec() });
        }
        self.config.check_geometry(fixed.geom())?;
        if nodes.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("parameter nodes do not match the network".into()));
        }
        let slope = T::lit(self.config.leaky_slope);
        let depth = self.config.depth();
        let input = crate::net::layers::concat(&[moving.as_map(), fixed.as_map()])?;
        let input = tape.constant(Value::Map(input));
        let mut layer = 0;
        let mut conv = |tape: &mut Tape<T>, x: NodeId| -> Result<NodeId> {
            let (w, b) = nodes[layer];
            let y = tape.conv(x, w, b, self.layers[layer].shape)?;
            layer += 1;
            Ok(y)
        };
        let mut skips = vec![input];
        let mut x = input;
        for _ in 0..depth {
            let c = conv(tape, x)?;
            x = tape.leaky_relu(c, slope)?;
            skips.push(x);
        }
        // skips[i] holds the features at resolution 1/2^i
        for j in 0..self.config.decoder_filters.len() {
            let c = conv(tape, x)?;
            x = tape.leaky_relu(c, slope)?;
            if j < depth {
                let up = tape.upsample(x)?;
                x = tape.concat(&[up, skips[depth - 1 - j]])?;
            }
        }
        conv(tape, x)
    }

    /// Displacement field predicted for registering `moving` onto `fixed`.
    pub fn forward(&self, fixed: &GridImage<T>, moving: &GridImage<T>) -> Result<DisplacementField<T>> {
        let mut tape = Tape::new();
        let nodes = self.record(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &nodes, fixed, moving)?;
        let field = DisplacementField::from_map(tape.map(out)?.clone())?;
        if !field.as_map().is_all_finite() {
            return Err(Error::Numerical("network produced a non-finite displacement".into()));
        }
        Ok(field)
    }
}
