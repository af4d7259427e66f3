//! Multi-task self-supervised graph representation learning.
//!
//! A graph-convolution encoder is trained against five pretext losses. At
//! every step the per-task gradients of the shared encoder weights are
//! reconciled by taking the minimum-norm point of their convex hull
//! ([`pareto`]), which gives an update direction that does not increase any
//! task loss to first order.

pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod graphstore;
pub mod numcore;
pub mod pareto;
pub mod pretext;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
