//! Gradient learning on lattices whose resolution anneals from coarse to fine,
//! with the statistics and diffusion simulations used to check it.

// `!(x <= bound)` is used deliberately so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod error;
pub mod harness;
pub mod objectives;
pub mod optim;
pub mod quantizer;
pub mod rational;
pub mod schedule;
pub mod sde;

pub use error::{Error, Result};
