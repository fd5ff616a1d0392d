//! Portmanteau goodness-of-fit tests for VARMA models: the classical
//! pseudo-Gaussian statistic and its center-outward rank-based
//! counterpart, together with the estimation and simulation machinery they
//! rely on.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod center_outward;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod innovations;
pub mod io;
pub mod linalg;
pub mod montecarlo;
pub mod portmanteau;
pub mod scores;
pub mod varma;

pub use error::{Error, Result};
