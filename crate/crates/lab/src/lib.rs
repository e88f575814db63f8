//! File formats, the experiment harness and the command-line driver built
//! on [`aope_core`].
//!
//! - [`io`]: MDP and policy JSON, JSONL datasets with a policy sidecar, and
//!   builtin instances (`toy2x2`, `tree_F`).
//! - [`config`]: experiment configs with dotted-key overrides.
//! - [`experiments`]: bias study, lower-bound demonstration, coverage sweeps
//!   and their CSV outputs.
//! - [`report`]: JSON summaries.
//! - [`cli`]: the `aope-lab` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
mod error;
pub mod experiments;
pub mod io;
pub mod report;

pub use error::{LabError, Result};
