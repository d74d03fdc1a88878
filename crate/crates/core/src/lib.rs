//! Localization distillation for bounding-box regression.
//!
//! Box edges are predicted as discrete distributions over a fixed support.
//! A student learns from a frozen teacher by matching temperature-softened
//! edge distributions with a KL term, on top of the usual GIoU and
//! distribution focal losses. Everything runs on a small reverse-mode tape
//! and a toy detector over synthetic scenes.

pub mod autodiff;
pub mod distill;
pub mod distributions;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod seed;
pub mod toydet;
pub mod verify;

pub use autodiff::{Gradients, Tape, Var};
pub use distributions::{
    BoxDistribution, EdgeDistribution, EdgeLogits, EdgeSupport, TargetProjection,
};
pub use error::{Error, Result};
pub use geometry::{AnchorPoint, BBox, EdgeOffsets};
pub use losses::{DistillConfig, KlDirection, KlOptions, LossWeights, TbrGate};
