//! Position estimates from single Wi-Fi scans.
//!
//! A scan is an unordered, variable-size set of `(BSSID, RSSI)` readings. This
//! crate trains and compares five regressors over such scans: a fixed-vector
//! MLP, RNN and LSTM over strongest-first sequences, an attention-pooling
//! baseline, and a Set Transformer.
//!
//! - [`autograd`]: `f64` tensors, a gradient tape and Adam.
//! - [`data`]: scan CSV I/O, a synthetic radio world, experiment splits.
//! - [`encoding`]: vocabulary, embeddings and RSSI scaling.
//! - [`models`]: the five architectures and checkpoints.
//! - [`training`]: normalization, losses and the training loop.
//! - [`evaluation`]: metre-space metrics, baselines, plot data and tables.
//! - [`pipeline`]: manifest-driven runs as used by the `setloc` binary.
//!
//! ```
//! use setloc::data::{assemble_experiment, generate_synthetic, ExperimentId, ExperimentSpec, SynthWorld};
//! use setloc::evaluation::centroid_baseline;
//!
//! let scans = generate_synthetic(&SynthWorld::single_floor(0), 200, 0).unwrap();
//! let splits = assemble_experiment(&scans, &ExperimentSpec::new(ExperimentId::E1, 0)).unwrap();
//! let baseline = centroid_baseline(&splits.train, &splits.test).unwrap();
//! assert!(baseline.mean_error_m > 0.0);
//! ```

pub mod autograd;
pub mod data;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scans.md")]
    mod scans {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
