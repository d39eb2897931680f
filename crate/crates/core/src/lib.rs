//! Deterministic simulator for data-parallel gradient descent.
//!
//! The crate covers the whole communication spectrum between fully
//! synchronous training and lossy gossip:
//!
//! * [`model`]: toy losses with hand-written gradients and the SGD step.
//! * [`data`]: seeded datasets, worker shards and mini-batch iteration.
//! * [`compression`]: sign and top-k codecs with error feedback.
//! * [`netsim`]: the discrete-event substrate (virtual time, latency, loss).
//! * [`strategies`]: worker and server state machines for each strategy,
//!   plus the replica consistency check.
//! * [`metrics`]: per-step rows, staleness and the run summary.
//! * [`harness`]: config parsing, orchestration and comparisons.
//! * [`sweep`]: batches of independent runs, in parallel when the
//!   `parallel` feature is on.

pub mod compression;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod parallel;
pub mod seed;
pub mod strategies;
pub mod sweep;

pub use error::{Error, Result};
