//! Stability-aware optimal power flow.
//!
//! The crate couples a linearized OPF with the infinite-horizon LQR cost of
//! steering the grid's generators from their current operating point to the
//! new setpoint, and checks the result by simulating the nonlinear
//! differential-algebraic model under LQR or AGC load-following control.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agc;
pub mod dae;
pub mod data;
pub mod dispatch;
pub mod error;
pub mod linalg;
pub mod linearize;
pub mod lqr;
pub mod netcase;
pub mod scenario;
pub mod simulator;
pub mod steady_state;

pub use error::{Error, Result};
