// Negated float comparisons (`!(x > 0.0)`) are deliberate: they reject
// NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Desk-scale harness for single-station epicentral-distance regression.
//!
//! The crate trains 1-D ResNet and TCN encoders on 3-channel ground-motion
//! records, with an optional 4th channel encoding P/S arrival times, and
//! provides the surrounding machinery: a reverse-mode autodiff engine,
//! geodesy, STEAD-format ingestion plus a synthetic trace generator,
//! a deterministic training loop, and grid-search analytics with report
//! emission.

pub mod data;
pub mod error;
pub mod experiments;
pub mod geo;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
