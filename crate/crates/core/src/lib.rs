//! Latent-variable ARX (LARX) and constrained LARX (CLARX) estimation.
//!
//! The crate is organised bottom-up: [`blockops`] for block-structured
//! algebra, [`moments`] for weighted covariances, [`design`] for turning
//! series into sample matrices, [`solver_clarx`] for the estimator,
//! [`special`] for the closed-form special cases, [`diagnostics`] for the
//! conditional OLS view and first-order-condition checks and [`harness`] for
//! rolling out-of-sample evaluation and synthetic data.

pub mod blockops;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod moments;
pub mod qcqp;
pub mod solver_clarx;
pub mod special;

pub use error::{LarxError, Result};
