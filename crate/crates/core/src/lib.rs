//! Numerical laboratory for second-order SPDEs with degenerate, possibly
//! unbounded coefficients.
//!
//! The crate discretizes the linear equation
//!
//! ```text
//! du = (ℒu + f) dt + (ℳ^l u + g^l) dB^l
//! ```
//!
//! in divergence form on a uniform box, and builds around it the machinery
//! needed to test the analysis: coefficient mollification, DiPerna-Lions
//! commutators, positivity / L¹ / energy diagnostics, a Zakai and Kushner
//! filtering pipeline with particle and Kalman-Bucy oracles, and Picard
//! iteration for Lipschitz nonlinear sources.

pub mod commutator;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod filter;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod mollifier;
pub mod noise;
pub mod numerics;
pub mod picard;
pub mod runner;
pub mod solver;
pub mod suite;
pub mod testfn;

pub use error::{Error, Result};
