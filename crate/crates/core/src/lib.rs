//! Multi-head spectral-adaptive graph anomaly detection.
//!
//! The pipeline: a graph's spectral fingerprint (extremal-eigenvalue moments
//! plus Rayleigh-quotient smoothness features) conditions a small hypernetwork
//! that emits per-head Chebyshev filter coefficients. Each head filters node
//! features in the spatial domain, a channel-attention layer fuses the heads,
//! and a linear classifier scores nodes. Two self-supervised regularizers keep
//! the heads from collapsing onto one filter: a teacher-student contrastive
//! term against an EMA parameter mirror, and a cross-correlation decorrelation
//! term over the concatenated head representations.
//!
//! Modules follow the pipeline: [`graph`] (CSR graphs, Laplacians, synthetic
//! data, splits), [`fingerprint`], [`autodiff`] (tape-based reverse mode +
//! Adam), [`model`], [`losses`], [`metrics`], [`trainer`], [`analysis`]
//! (frequency-response curves), and [`cli`].

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod dense;
pub mod error;
pub mod fingerprint;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod sparse;
pub mod trainer;

pub use error::Error;

/// Semantic version stamped into every written artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
