//! Consolidated control barrier functions with online gain adaptation.
//!
//! Many constituent barriers `h_s(x)` are folded into one smooth barrier
//! `H = 1 - sum_s phi(h_s, k_s)` whose gains `k` adapt online so that the
//! consolidated constraint stays controllable. The crate ships the pieces
//! (dense QP solver, bicycle dynamics, constituent barriers, consolidation,
//! adaptation, safety filters) and a multi-agent warehouse simulator built on
//! top of them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod consolidation;
pub mod constraints;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod qp;
pub mod sim;

pub use error::{ConfigError, Error, Result};
