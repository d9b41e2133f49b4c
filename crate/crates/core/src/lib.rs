//! Flow-aware traffic volume prediction.
//!
//! Trips are aggregated into per-interval volume tensors and directed flow
//! graphs ([`ingest`]), flow graphs become random-walk transition matrices
//! ([`flowgraph`]) that drive diffusion convolutions ([`convops`]) inside
//! stacked GRU layers ([`fcgru`]), trained with Adam ([`train`]) and
//! evaluated alongside flow-churn statistics ([`analysis`]). [`synth`]
//! generates reproducible commute-like trip data.

pub mod analysis;
pub mod array;
pub mod convops;
pub mod error;
pub mod fcgru;
pub mod flowgraph;
pub mod ingest;
mod io;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
