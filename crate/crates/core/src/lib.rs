//! Voice conversion by Gaussian-mixture mapping of vocal-tract features,
//! with glottal-waveform separation for the tract estimates.
//!
//! The pipeline has two phases. Training analyses a parallel corpus
//! pitch-synchronously, estimates each frame's vocal tract from its closed
//! glottal phase, aligns source and target frames with dynamic time warping
//! and fits a joint Gaussian mixture over the stacked line-spectral-frequency
//! vectors. Conversion regresses each source frame onto the target space,
//! predicts an excitation from target residual prototypes and resynthesizes
//! through the converted all-pole filters.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod audio;
pub mod conversion;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod glottal;
pub mod gmm;
pub mod lpc;
pub mod synth;
mod textio;

pub use error::{Error, Result};
