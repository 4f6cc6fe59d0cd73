//! Continuous robust tracking control for uncertain MIMO nonlinear systems
//! `x^(n) = h(X) + g(X) tau` whose input gain has non-zero leading principal
//! minors of known sign.
//!
//! The crate provides the error cascade, the `S D U` factorization of the
//! input gain, the control law with its gain conditions, a fixed-step
//! closed-loop simulator, and diagnostics that evaluate the Lyapunov
//! quantities along simulated trajectories.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cascade;
pub mod controller;
pub mod error;
pub mod plants;
pub mod reference;
pub mod sdu;
pub mod simulator;

pub use error::{Error, Result};
