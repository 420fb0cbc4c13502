//! Channel-aware personalized federated learning over D2D wireless networks.
//!
//! The library is organized around a single pipeline: spatial layouts of
//! clients ([`topology`]), physical-layer link quality and transmission-error
//! probabilities ([`channel`]), channel-aware neighbor selection
//! ([`selection`]), non-IID client datasets ([`data`]), desk-scale learners
//! ([`model`]), EM-based aggregation-weight estimation ([`em`]), the
//! personalized training loop with baselines ([`pfl`]), and empirical
//! convergence diagnostics ([`analysis`]).
//!
//! All randomness flows from a single master seed through named sub-streams
//! (see [`rng`]), so every stage is reproducible in isolation.

// Parameter checks use `!(x > 0.0)` so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod data;
pub mod em;
pub mod error;
pub mod model;
pub mod numeric;
pub mod pfl;
pub mod rng;
pub mod selection;
pub mod topology;

pub use error::{Error, Result};
