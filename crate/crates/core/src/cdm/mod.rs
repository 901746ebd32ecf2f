//! Target cognitive diagnosis models: NeuralCD, KSCD and KaNCD.
//!
//! All three share the NeuralCD interaction function
//!
//! ```text
//! x = q_j ⊙ (kstate_s − σ(difficulty_j)) · σ(discrimination_j)
//! p = σ(MLP(x))
//! ```
//!
//! with a sigmoid MLP whose weights are kept nonnegative, so raising a
//! required entry of the knowledge state never lowers `p`. They differ in
//! how the knowledge state is produced:
//!
//! * NeuralCD: `σ(θ_s)` from a K-wide student table.
//! * KaNCD: `σ(e_s · c_k)` from d-wide student and KC embeddings.
//! * KSCD: `σ(w · (e_s ⊙ c_k) + b)` with a learned fusion vector `w`.
//!
//! Gradients are derived by hand; [`crate::numerics::finite_diff_check`]
//! guards them in the tests.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{TrainSummary, CDM_CKPT_FORMAT};
pub use model::{Arch, CdmConfig, CdmModel};
pub use train::{evaluate_cdm, train_cdm, train_on_records, EpochLog, Evaluation, TrainLog};
