//! Eigenvector perturbation control chart for nonparametric profile
//! monitoring.
//!
//! Each observed profile is a response vector on a fixed design. The chart
//! keeps the sample correlation matrix of the last `w` profiles, swaps the
//! oldest slots for historical in-control profiles, and alarms when the
//! leading eigenvector of the result drifts away from `1/√w · 1`.

pub mod calibration;
pub mod chart;
pub mod corr;
pub mod eigen;
pub mod error;
pub mod linalg;
pub mod normal;
pub mod profile_model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
