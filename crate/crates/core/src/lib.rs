//! Simulation, estimation and diagnostics for linear targets `ψ = νᵀβ₀`
//! under adaptively collected linear bandit data.
//!
//! The pipeline is: [`features`] environments and [`policy`] rules produce a
//! [`trajectory`]; [`estimators`] fit the ridge outcome and Riesz models and
//! form the one-step estimate; [`diagnostics`] measure how far the design is
//! from a deterministic limit along `ν`; [`harness`] repeats all of this over
//! a grid of `(T, d)` cells described by a [`config`] file.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
