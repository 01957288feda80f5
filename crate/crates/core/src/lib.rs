//! Learning-to-rank with coarse ordinal bins refined by bounded offsets.
//!
//! The crate contains the ORBNet scorer and its pairwise/listwise/pointwise
//! baselines (all trained with hand-derived gradients), rank-correlation
//! metrics, MC-dropout pairwise confidence, a merge-sort annotation state
//! machine with a simulated noisy annotator, and the cross-validation
//! harness tying them together.

pub mod annotation;
pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod orbnet;
pub mod parallel;
pub mod ranking;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use parallel::Exec;
