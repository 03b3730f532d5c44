// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod federation;
pub mod math;
pub mod models;

pub use error::{Error, Result};
