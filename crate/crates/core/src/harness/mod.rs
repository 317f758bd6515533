//! End-to-end experiment harness: configuration, hierarchical seeding,
//! result records, caches, the verification suite and the CLI.

pub mod cache;
pub mod cli;
pub mod config;
pub mod couple;
pub mod records;
pub mod seeds;
pub mod suite;

pub use config::ExperimentConfig;
pub use records::{CheckOutcome, RunRecord};
