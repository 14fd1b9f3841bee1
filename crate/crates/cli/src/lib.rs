//! Command-line pipeline around the `evdistill` library.

// `!(x > 0.0)` is how validation rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
