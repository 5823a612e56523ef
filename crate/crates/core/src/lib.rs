//! Hypoelliptic mixing diagnostics for energy-conserving stochastic models.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the formulas in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod density;
pub mod error;
pub mod experiment;
pub mod fp;
pub mod hormander;
pub mod lyapunov;
pub mod model;
pub mod poly;
pub mod sim;
pub mod util;

pub use error::{Error, Result};
pub use lyapunov::{lyapunov_certificate, LyapunovCertificate};
pub use model::ModelSpec;
