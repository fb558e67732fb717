//! Learning-based deformable image registration.
//!
//! A convolutional network maps a (fixed, moving) image pair to a dense
//! displacement field; a differentiable warp and an unsupervised similarity +
//! smoothness objective (optionally plus a segmentation overlap term) make the
//! whole pipeline trainable by gradient descent. The same objective, optimized
//! directly over the field, gives classical per-pair registration.

pub mod data_io;
pub mod error;
pub mod eval;
pub mod grid;
pub mod losses;
pub mod net;
pub mod optimize;
pub mod real;
pub mod tape;
pub mod warp;

pub use error::{Error, FormatKind, Result};
pub use grid::{DisplacementField, FeatureMap, GridGeometry, GridImage, SegmentationMap};
pub use losses::{AuxWeight, LossBreakdown, LossWeights, SimKind};
pub use net::{NetConfig, NetParams};
pub use real::Real;
