//! Adaptive matrix completion for sparse multimodal satellite image stacks.
//!
//! A completion query names a (sensor, band, tile, date) cell that has no
//! image. The [`pattern`] resolver looks up time-adjacent observations in the
//! [`catalog`], derives a model pattern from them, trains (or reuses) a
//! gradient-boosted regressor from [`gbdt`] for that pattern and predicts the
//! missing image pixel by pixel. Queries with no same-sensor neighbors are
//! delegated to an external inter-modal generator through a directory-based
//! request exchange.

pub mod catalog;
pub mod gbdt;
mod hash;
mod par;
pub mod pattern;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use par::with_threads;
