//! File formats, model serialization, and the `pipeline` CLI for the
//! slickwater oil-water hyperspectral classifier. The algorithms themselves
//! live in `slickwater-core`.

pub mod archive;
pub mod cli;
pub mod config;
pub mod error;
pub mod hsio;
pub mod models;
pub mod report;

pub use error::IoError;
