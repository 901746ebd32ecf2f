//! Privacy auditing for cognitive diagnosis models.
//!
//! Trains target models, applies approximate unlearning defenses, mounts
//! profile-based membership inference attacks that exploit exposed
//! knowledge-state vectors, and recovers those vectors from rendered radar
//! charts.

pub mod attack;
pub mod audit;
pub mod cdm;
pub mod data;
mod error;
pub mod numerics;
pub mod radar;
pub mod unlearn;

pub use error::{Error, Result};
