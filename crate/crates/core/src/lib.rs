//! Replay a project's version history to measure what automated GUI tests
//! cost to build and keep working, and when they pay off against manual runs.

pub mod config;
pub mod estimator;
pub mod exec;
pub mod fixture;
pub mod history;
pub mod ledger;
pub mod model;
pub mod report;
pub mod session;
