//! Dense kernels, parameter storage, Adam, logit-form BCE, seeded randomness
//! and the finite-difference gradient harness shared by every learned model.
//!
//! Everything here is single-threaded and reduction order is fixed, so a
//! given seed yields bit-identical results on the same platform.

mod adam;
mod gradcheck;
mod loss;
mod matrix;
mod param;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, FD_STEP};
pub use loss::bce_with_logit;
pub use matrix::{dot, sigmoid, Matrix};
pub use param::{assign_values, flatten_grads, flatten_values, param_count, zero_grads, ParamBlock};
pub use rng::{stream_id, Rng};
