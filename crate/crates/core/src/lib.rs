//! Physics-informed skeletal motion engine.
//!
//! Noisy 2D pose sequences are lifted to 3D, re-estimated through learned
//! Euler-Lagrange dynamics integrated in both temporal directions, fused,
//! projected back to 2D and scored with pose and similarity metrics. An
//! analytic pendulum-chain oracle supplies verifiable ground truth.

pub mod diffmath;
pub mod dynamics;
pub mod error;
pub mod heatmap;
pub mod lifting;
pub mod metrics;
pub mod physnet;
pub mod projection;
pub mod rng;
pub mod skeleton;

pub use error::{Error, Result};
