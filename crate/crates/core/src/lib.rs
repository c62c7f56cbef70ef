//! Spatio-temporal coupled JPDA filtering for dependent extended targets.
//!
//! Each target is a curve `f(u)` over a one-dimensional index `u` that
//! evolves over time. Along the index the curves are tracked with a coupled
//! joint probabilistic data association filter whose cross-target process
//! noise comes from a coregionalization matrix `B`; the per-index outputs
//! then drive a temporal Kalman filter and a fixed-lag smoother.

pub mod association;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod simulator;
pub mod smoother;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};
