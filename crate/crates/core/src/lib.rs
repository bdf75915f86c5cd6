// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod numerics;
pub mod parallel;
pub mod policy;
pub mod sim;
pub mod tasks;

pub use error::{Error, ErrorClass, Result};
