// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amp;
pub mod dataset;
pub mod decorrelation;
pub mod diagnostics;
pub mod distribution;
pub mod error;
pub mod expectile;
pub mod hypothesis;
pub mod io;
pub mod joint;
pub mod normal;
pub mod roots;
pub mod sim;
pub mod state_evolution;

pub use error::{Error, Result};
