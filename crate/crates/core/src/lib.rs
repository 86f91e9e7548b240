// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod callialign;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod orderformer;
pub mod pilots;
pub mod preprocess;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
