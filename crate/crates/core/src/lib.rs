//! Label-free signal-quality gate for wrist photoplethysmography.
//!
//! Raw traces are conditioned into z-scored windows, embedded by a contrastive
//! 1-D residual encoder, reduced to a four-number persistence signature and
//! clustered with HDBSCAN; the dominant cluster is the clean stratum.

pub mod augment;
pub mod clustering;
pub mod conditioning;
pub mod encoder;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
pub use matrix::Matrix;
