//! Bayes factor workflow engine.
//!
//! Fits hierarchical lognormal mixed models with an adaptive HMC sampler,
//! estimates marginal likelihoods by bridge sampling or the Savage–Dickey
//! ratio, calibrates whole Bayes factor pipelines by simulation, and turns
//! calibrated evidence into utility-optimal decisions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod decision;
pub mod design;
pub mod error;
pub mod fit;
pub mod inference;
pub mod io;
pub mod marginal;
pub mod math;
pub mod model;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
