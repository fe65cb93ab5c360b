//! Instrumented analysis of decoder-only transformers.
//!
//! The crate loads a small decoder checkpoint, exposes named taps at every
//! internal tensor of each layer, and builds three workflows on top of the
//! instrumented forward pass:
//!
//! - detection and classification of massive activations (single extreme
//!   scalars) including their dependence on residual bypasses,
//! - detection of channel-wise outliers (whole shifted low-variance channels)
//!   and their attribution to normalization stages and weight rows,
//! - interventions that replace activations, gamma entries, or weight rows,
//!   with perplexity evaluation of the consequences.
//!
//! See the `cli` module for the command-line surface over these workflows.

pub mod cli;
pub mod co;
pub mod dump;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod intervene;
pub mod ledger;
pub mod ma;
pub mod model;
pub mod report;
pub mod tap;

pub use error::{Error, Result};

/// Entry point used by the `actlab` binary; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::run()
}
