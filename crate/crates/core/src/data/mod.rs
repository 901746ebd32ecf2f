//! Student-response datasets: CSV loading, a DINA synthetic generator and
//! the student-level partition that drives the audit protocol.

mod io;
mod split;
mod synthetic;
mod types;

pub use io::{load_dataset, read_q_matrix, read_records, write_dataset, write_q_matrix, write_records};
pub use split::{
    forget_set_size, partition_students, Part, SplitPlan, StudentSet, StudentSplit, SPLITPLAN_FORMAT, TEST_FRACTION,
    VALID_FRACTION,
};
pub use synthetic::{generate_synthetic, masters_all, Mastery, SyntheticSpec};
pub use types::{Dataset, InteractionRecord, QMatrix};
