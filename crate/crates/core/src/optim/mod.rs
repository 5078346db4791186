//! Quantized and unquantized learning equations.
//!
//! The quantized update rounds the direction, not the weights:
//! `w <- w - (alpha / q_p) * round(q_p * h)`. With an exact rational `alpha`
//! the weights stay on the lattice `1 / (den(alpha) * q_p)`.

mod direction;
mod run;
mod step;

pub use direction::{
    direction_adam, direction_sgd, AdamParams, AdamState, DirectionalDerivative, OptimizerKind,
};
pub use run::{run, EpochRow, InitSpec, RunConfig, RunMeta, RunRecord, StepRow, StopReason};
pub use step::{
    rescue_vanishing, step_quantized, step_unquantized, OptimizerState, RescueOutcome, StepOutcome,
    Weights,
};
