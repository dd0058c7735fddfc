//! Spacecraft reorientation under a single pointing keep-out cone.
//!
//! The crate bundles rigid-body attitude propagation, the shaped-reward
//! learning environment, a sampled-data control-barrier-function safety
//! filter that certifies every commanded torque, and a Monte Carlo harness
//! for the safety and performance metrics.

pub mod cbf;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod envserver;
mod error;
pub mod keepout;
pub mod montecarlo;
pub mod policy;
pub mod qp;
pub mod quatmath;
pub mod reward;
pub mod svg;

pub use error::{Error, Result};
pub use quatmath::{Quaternion, Vec3};
