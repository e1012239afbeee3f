//! Distributed Kalman filtering over sensor networks with randomized
//! pairwise gossip.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core:
//!
//! * [`model`]: plant, sensors, communication graph and gossip probabilities.
//! * [`gossip`]: pairwise averaging matrices, event sampling, spectral rate
//!   and averaging time.
//! * [`filters`]: information-form Kalman updates, the noncooperative
//!   decentralized filter, consensus on information pairs and gossip on
//!   estimates.
//! * [`analysis`]: the stacked steady-state error system, the expected
//!   covariance map and its fixed point, trace comparisons.
//! * [`scheduler`]: power-constrained selection of which neighbours a node
//!   fuses measurements from.
//! * [`sim`]: ground-truth simulation, metrics and Monte-Carlo campaigns.
//!
//! Node indices are zero-based throughout the API. Error messages and
//! diagnostics print them one-based.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod filters;
pub mod gossip;
pub mod linalg;
pub mod model;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
