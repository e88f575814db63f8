//! Adaptive offline policy evaluation for tabular, finite-horizon MDPs.
//!
//! The crate is `no_std` (it needs `alloc`) and free of IO. It provides:
//!
//! - [`mdp`]: tabular MDPs, policies, trajectories and exact evaluation by
//!   backward induction.
//! - [`rng`]: counter-based random streams keyed by `(seed, cell, k)`.
//! - [`tape`]: the tape-machine data-collection model, with one pre-sampled
//!   tape per `(h, s, a)` and a consumption frontier.
//! - [`dataset`] and [`loggers`]: logging processes (fixed, multi-policy,
//!   UCB-VI, the adversarial tree logger) and shadow replay.
//! - [`tmis`]: the plug-in TMIS estimator and the discard-to-i.i.d. reduction.
//! - [`bounds`]: instance-dependent error bounds, exploration statistics and
//!   concentration radii.
//!
//! Timesteps are `0..H` internally. `P[h]` is the transition taken after
//! acting at step `h`, so there are `H - 1` transition layers.

#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bounds;
pub mod dataset;
mod error;
pub mod instances;
pub mod loggers;
pub mod mdp;
pub mod rng;
pub mod tape;
pub mod tmis;

pub use bounds::{BoundKind, BoundReport, ExplorationStats};
pub use dataset::{Counts, Dataset};
pub use error::{Error, Result};
pub use loggers::LoggerSpec;
pub use mdp::{Policy, RewardNoise, Shape, Step, TabularMdp, Trajectory, ValueTables, Violation};
pub use tape::TapeSet;
pub use tmis::{EmpiricalModel, MinOver, TmisEstimate};
