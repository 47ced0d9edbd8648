//! Synthetic-media detection with linear probes on the intermediate-layer
//! embeddings of frozen encoders.
//!
//! Embeddings arrive in a single-file [`store::FeatureStore`]. A symmetric
//! window of block layers around the middle of the encoder
//! ([`window::window_indices`]) is concatenated and fed to a linear probe
//! ([`classifier`]). The [`analysis`] module measures how detection signal is
//! distributed over depth, [`cluster`] runs the clustering benchmark and
//! [`attribution`] identifies the generator behind a sample.

pub mod analysis;
pub mod attribution;
pub mod classifier;
pub mod cluster;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod probe;
pub mod sampling;
pub mod store;
pub mod window;

pub use error::{Error, Result};
