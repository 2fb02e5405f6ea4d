//! Training-free logical and structural anomaly detection over precomputed
//! patch embeddings.
//!
//! Three detectors score every query image:
//!
//! * [`patch`]: nearest-neighbor cosine distance against a memory bank of
//!   anomaly-free patch features, averaged over four feature stages.
//! * [`interest`]: minimum-weight bipartite matching between pooled
//!   interest features of the query and of each reference image.
//! * [`composition`]: declarative rules over counted and zero-shot
//!   classified interest instances.
//!
//! [`calibration`] standardizes the first two against anomaly-free statistics
//! and fuses all three by taking the maximum. [`pipeline`] wires the stages
//! together; [`synth`] produces datasets with planted anomalies.

pub mod calibration;
pub mod cli;
pub mod composition;
pub mod error;
pub mod hungarian;
pub mod interchange;
pub mod interest;
pub mod linalg;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

/// Number of hierarchical feature stages per image.
pub const NUM_STAGES: usize = 4;
