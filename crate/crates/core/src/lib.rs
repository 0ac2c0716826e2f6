//! Stall-duration analysis, joint scheduling/quality optimization and
//! discrete-event simulation for video streaming from erasure-coded storage.
//!
//! Servers expose several parallel FIFO streams that split their bandwidth.
//! A request for a video picks a quality, then `k` of the servers holding its
//! coded chunks, then one stream per chosen server. The [`analytics`] module
//! bounds the resulting mean stall duration in closed form, [`optimizer`]
//! trades that bound against delivered quality, and [`simulator`] measures
//! the same system empirically.

pub mod analytics;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod simulator;

pub use error::{Error, Result};
