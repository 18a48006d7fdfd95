//! Tactile-image encoding, self-supervised pretraining and nearest-neighbor
//! imitation for a 15-pad tactile hand, validated on a synthetic contact
//! benchmark.
//!
//! The pipeline has two phases. Phase one turns raw 720-dimensional tactile
//! readings into 3x16x16 spatial images, subsamples play data by hand motion,
//! and pretrains a small convolutional encoder with a bootstrap (online /
//! EMA-target) objective. Phase two featurizes a handful of demonstrations,
//! scales each modality so its maximum in-set distance is 1, and retrieves
//! actions by weighted nearest neighbor with a reject buffer.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability, or the `tdex` binary for the end-to-end CLI.

pub mod data;
pub mod error;
pub mod ingest;
pub mod io;
pub mod nn;
pub mod policy;
pub mod augment;
pub mod bench;
pub mod byol;
pub mod config;
pub mod pipeline;
pub mod encoder;
pub mod represent;
pub mod seed;

pub use error::{Result, TdexError};
