//! Multi-view residual covariance modelling and covariance-weighted bundle
//! adjustment over planar surface patches.

pub mod covariance;
pub mod deformation;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod image;
pub mod information;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
