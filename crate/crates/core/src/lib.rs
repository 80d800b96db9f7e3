//! Ordinal prototype learning over coarse stage labels.
//!
//! Features are trained so that their pairwise similarity ranks agree with the
//! ranks implied by the ordinal labels, at the level of instances, classes,
//! and instance-to-class distances. Two anchor-class global prototypes are
//! tracked by a moving average and used to score a hidden split of a middle
//! class.

pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod prototypes;
pub mod ranking;
pub mod trainer;

pub use error::{Error, Result};
