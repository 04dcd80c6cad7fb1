//! Simulator for differentially-private federated learning over wireless
//! links where each device trades learning value against its energy bill.
//!
//! [`engine::run_simulation`] runs the fairness-aware scheme and the vanilla
//! benchmark side by side on identical data and channel draws.
//! [`cli::run_experiment`] wraps it with config loading and CSV/JSON output.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod localtrain;
pub mod par;
pub mod policy;
pub mod privacy;
pub mod rng;
pub mod summary;

pub use error::{Error, Result};
