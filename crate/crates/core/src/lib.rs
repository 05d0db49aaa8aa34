//! Finite-blocklength rate-distortion quantities for Gaussian sources with memory.
//!
//! Rates are in nats internally; bits views are provided where results are reported.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]

pub mod bounds;
pub mod error;
pub mod numeric;
pub mod qform;
pub mod rng;
pub mod simulate;
pub mod spectrum;
pub mod tilted;
pub mod waterfill;

pub use error::{Error, Result};
