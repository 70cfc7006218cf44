//! Algorithmic core of the slickwater pipeline: oil-water classification of
//! hyperspectral imagery with a pixel-wise random forest whose probability
//! maps are refined by a small encoder-decoder CNN.
//!
//! Everything in this crate is pure computation over in-memory buffers and is
//! deterministic given the configured seeds. File formats, model
//! serialization, and the CLI live in the companion `slickwater` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cnn;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod preprocess;
pub mod rforest;
pub mod rng;
pub mod synth;

pub use error::CoreError;
