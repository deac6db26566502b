//! Viewport-driven rate-distortion optimized tile streaming for
//! equirectangular 360° video.
//!
//! The crate turns head-movement traces into per-GOP navigation heat maps,
//! fits per-tile QP→rate and rate→distortion models, allocates bandwidth
//! across tiles by convex water-filling, and evaluates the resulting
//! viewport quality against a monolithic and a speed-based baseline.

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod navigation;
pub mod optimizer;
pub mod pipeline;
pub mod rdmodel;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
