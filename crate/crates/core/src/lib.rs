//! Matrix-free approximate Kalman filtering for large, spatially discretized
//! linear systems.
//!
//! The least-squares kernel Kalman filter ([`observers::LskKf`]) replaces the
//! steady-state covariance by a designed factorization `P = L Lᵀ` whose
//! products are cheap (FFT convolutions, masks, Kronecker factors), and
//! solves each measurement update with conjugate gradients. Baseline
//! estimators, dense reference filters, a heat-equation test model and an
//! experiment harness live alongside it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod harness;
pub mod linop;
pub mod model;
pub mod observers;
pub mod oracle;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
