//! Video memorability prediction and memorability-weighted summarization.
//!
//! The crate ingests pre-extracted per-video feature records, trains a
//! small motion encoder with a text-guided cross-modal contrastive loss,
//! encodes visual appearance at three levels with text-visual attention,
//! fuses per-modality scores with grid-searched simplex weights, and
//! applies predicted memorability to rectify summary importance scores
//! before 0-1 knapsack clip selection.
//!
//! Numeric kernels in [`numerics`] and the metrics are generic over the
//! scalar type; the pipeline itself runs on the `f64` aliases below.

pub mod appearance;
pub mod config;
pub mod dataio;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod report;
pub mod summarizer;
pub mod tmccl;
mod util;

pub use error::{Error, Result};

// The pipeline runs on 64-bit floats: gradient checks stay tight and
// reruns are bit-reproducible.
pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type ParamSet = numerics::ParamSet<f64>;
pub type Adam = numerics::Adam<f64>;
