//! ADAM, per-pair (instance) optimization of a displacement field, and amortized
//! training of the network by single-pair stochastic gradient descent.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::dice_eval;
use crate::grid::{DisplacementField, GridGeometry, GridImage, SegmentationMap};
use crate::losses::{unsup_loss_and_grad, AuxWeight, LossBreakdown, LossWeights, SimKind};
use crate::net::NetParams;
use crate::real::Real;
use crate::tape::{NodeId, Tape, Value};

/// Learning rate of the published training setup.
pub const DEFAULT_TRAIN_LR: f64 = 1e-4;
/// Step size for optimizing a displacement field directly, in voxels per step.
pub const DEFAULT_INSTANCE_LR: f64 = 0.1;
pub const DEFAULT_INSTANCE_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: DEFAULT_TRAIN_LR, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        AdamState { config, t: 0, m: vec![T::zero(); len], v: vec![T::zero(); len] }
    }

    /// One bias-corrected ADAM update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "ADAM state holds {} values, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient {} at parameter {i} (step {})", grads[i], self.t + 1)));
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- instance optimization

#[derive(Debug, Clone)]
pub struct InstanceResult<T> {
    /// Best iterate seen (lowest total loss), never worse than the initial field.
    pub field: DisplacementField<T>,
    pub best_loss: LossBreakdown<T>,
    /// Total loss of every evaluated iterate, starting with the initial field.
    pub trace: Vec<f64>,
}

/// Refines `u_init` by ADAM on the unsupervised loss for `iterations` steps.
pub fn optimize_instance<T: Real>(
    fixed: &GridImage<T>,
    moving: &GridImage<T>,
    u_init: &DisplacementField<T>,
    weights: &LossWeights,
    sim: SimKind,
    iterations: usize,
    lr: f64,
) -> Result<InstanceResult<T>> {
    let mut u = u_init.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), u.vectors().len());
    let mut best: Option<(LossBreakdown<T>, DisplacementField<T>)> = None;
    let mut trace = Vec::with_capacity(iterations + 1);
    for it in 0..=iterations {
        let (loss, grad) = unsup_loss_and_grad(fixed, moving, &u, weights, sim)?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at instance iteration {it}")));
        }
        trace.push(loss.total.as_f64());
        if best.as_ref().is_none_or(|(b, _)| loss.total < b.total) {
            best = Some((loss, u.clone()));
        }
        if it == iterations {
            break;
        }
        adam.step(u.vectors_mut(), grad.vectors())?;
    }
    let (best_loss, field) = best.expect("at least one evaluation");
    Ok(InstanceResult { field, best_loss, trace })
}

// ---------------------------------------------------------------- training data

/// Which labels feed the segmentation loss, and as which channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelChannels {
    /// `channel_of[label]`; `None` drops the label (unobserved or background).
    pub channel_of: Vec<Option<usize>>,
    pub channels: usize,
}

impl LabelChannels {
    /// Every foreground label `1..count` as its own channel.
    pub fn all(count: usize) -> Self {
        Self::subset(count, &(1..count).collect::<Vec<_>>()).expect("valid by construction")
    }

    /// Only the listed labels, in the given order.
    pub fn subset(count: usize, labels: &[usize]) -> Result<Self> {
        let mut channel_of = vec![None; count];
        for (c, &l) in labels.iter().enumerate() {
            if l >= count || channel_of[l].is_some() {
                return Err(Error::Config(format!("observed label {l} is out of range or repeated")));
            }
            channel_of[l] = Some(c);
        }
        if labels.is_empty() {
            return Err(Error::Config("at least one label must be observed".into()));
        }
        Ok(LabelChannels { channel_of, channels: labels.len() })
    }

    /// Labels merged into groups: `groups[label]` is the group index, or `None`.
    pub fn grouped(groups: Vec<Option<usize>>) -> Result<Self> {
        let channels = groups.iter().flatten().max().map_or(0, |m| m + 1);
        if channels == 0 {
            return Err(Error::Config("at least one label must be observed".into()));
        }
        for c in 0..channels {
            if !groups.contains(&Some(c)) {
                return Err(Error::Config(format!("group {c} has no labels")));
            }
        }
        Ok(LabelChannels { channel_of: groups, channels })
    }

    pub fn encode<T: Real>(&self, labels: &GridImage<T>) -> Result<SegmentationMap<T>> {
        let count = self.channel_of.len();
        let k = self.channels;
        let mut w = vec![T::zero(); labels.geom().voxel_count() * k];
        for (index, &v) in labels.values().iter().enumerate() {
            let code = crate::grid::label_code(v, count).ok_or(Error::LabelOutOfRange { index, value: v.as_f64(), count })?;
            if let Some(c) = self.channel_of[code] {
                w[index * k + c] = T::one();
            }
        }
        SegmentationMap::new(labels.geom(), k, w)
    }
}

#[derive(Debug, Clone)]
pub struct TrainExample<T> {
    pub fixed: GridImage<T>,
    pub moving: GridImage<T>,
    segs: Option<(SegmentationMap<T>, SegmentationMap<T>)>,
}

impl<T: Real> TrainExample<T> {
    pub fn unsupervised(fixed: GridImage<T>, moving: GridImage<T>) -> Self {
        TrainExample { fixed, moving, segs: None }
    }

    pub fn with_labels(
        fixed: GridImage<T>,
        moving: GridImage<T>,
        fixed_labels: &GridImage<T>,
        moving_labels: &GridImage<T>,
        channels: &LabelChannels,
    ) -> Result<Self> {
        let segs = Some((channels.encode(fixed_labels)?, channels.encode(moving_labels)?));
        Ok(TrainExample { fixed, moving, segs })
    }

    pub fn has_segmentations(&self) -> bool {
        self.segs.is_some()
    }
}

/// Training pairs plus a count of how often segmentations were read.
#[derive(Debug)]
pub struct Dataset<T> {
    examples: Vec<TrainExample<T>>,
    seg_reads: AtomicUsize,
}

impl<T: Real> Dataset<T> {
    pub fn new(examples: Vec<TrainExample<T>>) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::Config("the training set is empty".into()))?;
        let g = first.fixed.geom();
        for (i, e) in examples.iter().enumerate() {
            for other in [e.fixed.geom(), e.moving.geom()] {
                if other != g {
                    return Err(Error::Config(format!("training pair {i} has geometry {:?}, expected {:?}", other.dims(), g.dims())));
                }
            }
        }
        Ok(Dataset { examples, seg_reads: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn geom(&self) -> GridGeometry {
        self.examples[0].fixed.geom()
    }

    pub fn example(&self, i: usize) -> &TrainExample<T> {
        &self.examples[i]
    }

    /// Segmentations of pair `i`. Every call is counted.
    pub fn segmentations(&self, i: usize) -> Option<(&SegmentationMap<T>, &SegmentationMap<T>)> {
        self.seg_reads.fetch_add(1, Ordering::Relaxed);
        self.examples[i].segs.as_ref().map(|(a, b)| (a, b))
    }

    pub fn segmentation_reads(&self) -> usize {
        self.seg_reads.load(Ordering::Relaxed)
    }
}

/// A labelled pair used to select the best network by Dice.
#[derive(Debug, Clone)]
pub struct ValidationPair<T> {
    pub fixed: GridImage<T>,
    pub moving: GridImage<T>,
    pub fixed_labels: GridImage<T>,
    pub moving_labels: GridImage<T>,
}

pub fn mean_validation_dice<T: Real>(params: &NetParams<T>, pairs: &[ValidationPair<T>], label_count: usize) -> Result<f64> {
    let mut sum = 0.0;
    for p in pairs {
        let u = params.forward(&p.fixed, &p.moving)?;
        sum += dice_eval(&p.fixed_labels, &p.moving_labels, &u, label_count)?.mean.unwrap_or(0.0);
    }
    Ok(sum / pairs.len().max(1) as f64)
}

// ---------------------------------------------------------------- training

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub sim: SimKind,
    pub weights: LossWeights,
    pub seed: u64,
    /// Validate every this many iterations (and after the last); 0 disables.
    pub validation_every: usize,
    /// Report a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Label count of the validation label maps.
    pub label_count: usize,
}

impl TrainConfig {
    pub fn new(iterations: usize, sim: SimKind, weights: LossWeights, seed: u64) -> Self {
        TrainConfig {
            iterations,
            adam: AdamConfig::default(),
            sim,
            weights,
            seed,
            validation_every: 0,
            checkpoint_every: 0,
            label_count: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one training iteration is required".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub pair: usize,
    pub loss: LossBreakdown<f64>,
}

/// Hooks called while training; all default to doing nothing.
pub trait TrainObserver<T> {
    fn iteration(&mut self, _record: &LogRecord) {}
    fn validation(&mut self, _iteration: usize, _mean_dice: f64) {}
    fn checkpoint(&mut self, _iteration: usize, _params: &NetParams<T>) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl<T> TrainObserver<T> for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetParams<T>,
    /// Parameters with the best validation Dice (the final ones without validation).
    pub best_params: NetParams<T>,
    pub best_validation: Option<(usize, f64)>,
    pub log: Vec<LogRecord>,
    pub validation_log: Vec<(usize, f64)>,
}

/// Scalar nodes of a recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub similarity: Option<NodeId>,
    pub smoothness: Option<NodeId>,
    pub segmentation: Option<NodeId>,
}

/// Records the registration loss of the displacement in `flow` on `tape`.
///
/// Same terms and scaling as [`crate::losses::aux_loss`]; `segs` must be present
/// exactly when the weights use segmentations.
pub fn record_loss<T: Real>(
    tape: &mut Tape<T>,
    flow: NodeId,
    fixed: &GridImage<T>,
    moving: &GridImage<T>,
    segs: Option<(&SegmentationMap<T>, &SegmentationMap<T>)>,
    weights: &LossWeights,
    sim: SimKind,
) -> Result<LossNodes> {
    let seg_term = |tape: &mut Tape<T>, scale: T| -> Result<NodeId> {
        let (sf, sm) = segs.ok_or_else(|| Error::Config("the segmentation term needs segmentations".into()))?;
        let src = tape.constant(Value::Map(sm.as_map().clone()));
        let warped = tape.warp(src, flow)?;
        let l = tape.seg_loss(sf.as_map(), warped)?;
        tape.scale(l, scale)
    };
    if weights.gamma == AuxWeight::SegOnly {
        let seg = seg_term(tape, T::one())?;
        return Ok(LossNodes { total: seg, similarity: None, smoothness: None, segmentation: Some(seg) });
    }
    let n = T::from_usize(fixed.geom().voxel_count());
    let src = tape.constant(Value::Map(moving.as_map().clone()));
    let warped = tape.warp(src, flow)?;
    let similarity = match sim {
        SimKind::Mse => tape.mse(fixed, warped)?,
        SimKind::Cc => {
            let cc = tape.local_cc(fixed, warped, weights.cc_window)?;
            tape.scale(cc, -T::one() / n)?
        }
    };
    let smooth = tape.smoothness(flow)?;
    let smooth = tape.scale(smooth, T::lit(weights.lambda) / n)?;
    let mut total = tape.add(similarity, smooth)?;
    let mut segmentation = None;
    if let AuxWeight::Weight(g) = weights.gamma {
        if g != 0.0 {
            let seg = seg_term(tape, T::lit(g))?;
            total = tape.add(total, seg)?;
            segmentation = Some(seg);
        }
    }
    Ok(LossNodes { total, similarity: Some(similarity), smoothness: Some(smooth), segmentation })
}

/// Loss breakdown and flat parameter gradient (in [`NetParams::flatten`] order) for one pair.
pub fn network_loss_and_grad<T: Real>(
    params: &NetParams<T>,
    fixed: &GridImage<T>,
    moving: &GridImage<T>,
    segs: Option<(&SegmentationMap<T>, &SegmentationMap<T>)>,
    weights: &LossWeights,
    sim: SimKind,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let mut tape = Tape::new();
    let nodes = params.record(&mut tape, true);
    let flow = params.forward_on_tape(&mut tape, &nodes, fixed, moving)?;
    let ln = record_loss(&mut tape, flow, fixed, moving, segs, weights, sim)?;
    let get = |id: Option<NodeId>| id.map_or(Ok(T::zero()), |i| tape.scalar(i));
    let loss = LossBreakdown {
        total: tape.scalar(ln.total)?,
        similarity: get(ln.similarity)?,
        smoothness: get(ln.smoothness)?,
        segmentation: get(ln.segmentation)?,
    };
    let grads = tape.backward(ln.total)?;
    let mut flat = Vec::with_capacity(params.parameter_count());
    for (w, b) in nodes {
        for id in [w, b] {
            let g = grads.get(id).and_then(Value::as_flat).expect("every parameter has a gradient");
            flat.extend_from_slice(g);
        }
    }
    Ok((loss, flat))
}

/// Trains `init` on `data`, sampling one pair uniformly per iteration.
pub fn train<T: Real>(
    init: NetParams<T>,
    data: &Dataset<T>,
    validation: &[ValidationPair<T>],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    init.config().check_geometry(data.geom())?;
    let uses_segs = config.weights.gamma.uses_segmentations();
    if !validation.is_empty() && config.label_count < 2 {
        return Err(Error::Config("validation needs the label count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(config.adam, flat.len());
    let mut log = Vec::with_capacity(config.iterations);
    let mut validation_log = Vec::new();
    let mut best: Option<(usize, f64, NetParams<T>)> = None;

    for it in 1..=config.iterations {
        let pair = rng.random_range(0..data.len());
        let ex = data.example(pair);
        let segs = if uses_segs {
            Some(data.segmentations(pair).ok_or_else(|| {
                Error::Config(format!("training pair {pair} has no segmentations but the loss needs them"))
            })?)
        } else {
            None
        };
        let (loss, grad) = network_loss_and_grad(&params, &ex.fixed, &ex.moving, segs, &config.weights, config.sim)?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at iteration {it} (pair {pair})")));
        }
        adam.step(&mut flat, &grad)?;
        params.assign_flat(&flat)?;

        let record = LogRecord {
            iteration: it,
            pair,
            loss: LossBreakdown {
                total: loss.total.as_f64(),
                similarity: loss.similarity.as_f64(),
                smoothness: loss.smoothness.as_f64(),
                segmentation: loss.segmentation.as_f64(),
            },
        };
        observer.iteration(&record);
        log.push(record);

        let last = it == config.iterations;
        if !validation.is_empty() && config.validation_every > 0 && (it % config.validation_every == 0 || last) {
            let dice = mean_validation_dice(&params, validation, config.label_count)?;
            observer.validation(it, dice);
            validation_log.push((it, dice));
            if best.as_ref().is_none_or(|(_, d, _)| dice > *d) {
                best = Some((it, dice, params.clone()));
            }
        }
        if config.checkpoint_every > 0 && (it % config.checkpoint_every == 0 || last) {
            observer.checkpoint(it, &params)?;
        }
    }
    let (best_validation, best_params) = match best {
        Some((it, d, p)) => (Some((it, d)), p),
        None => (None, params.clone()),
    };
    Ok(TrainOutcome { params, best_params, best_validation, log, validation_log })
}

/// Moving average of the total loss over `window` records ending at each index.
pub fn moving_average(log: &[LogRecord], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.len());
    let mut acc = 0.0;
    for (i, r) in log.iter().enumerate() {
        acc += r.loss.total;
        if i >= window {
            acc -= log[i - window].loss.total;
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
