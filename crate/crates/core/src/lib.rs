//! Elective and emergency surgery planning.
//!
//! Offline, electives are assigned to operating-room blocks and given
//! tentative starting times. Online, a greedy policy runs the week in a
//! discrete-event simulator, slotting emergencies in and migrating electives
//! when a block is expected to run long. Monte Carlo evaluation ties the two
//! together.

pub mod evalmc;
pub mod instgen;
pub mod model;
pub mod planners;
pub mod rng;
pub mod simpolicy;
pub mod solver;
pub mod stage2;
pub mod surrogate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("inconsistent input: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
