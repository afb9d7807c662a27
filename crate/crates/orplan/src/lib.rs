//! Command line and HTTP front end for the surgery planner.

pub mod api;
pub mod artifacts;
pub mod cli;
pub mod store;
