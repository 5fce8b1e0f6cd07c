//! Label fusion for indoor RGB-D scenes.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod fixtures;
pub mod fuse;
pub mod geometry;
pub mod ingest;
pub mod mv;
pub mod nav;
pub mod parts;
pub mod pipeline;
pub mod raster;
pub mod semmap;
pub mod service;

pub use error::{Error, Result};
