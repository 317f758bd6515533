//! Simulation and verification toolkit for random walks confined to a lattice
//! blowup of a compact domain, for the tilted random interlacements built from
//! them, and for the soft-local-times coupling between the two.
//!
//! The crate is organized around the pipeline
//! [`lattice`] → [`spectrum`] → [`walks`] → [`potential`] → [`chains`] →
//! [`slt`], with [`rw_estimates`] holding standalone random-walk estimate
//! checks and [`harness`] providing configuration, seeding, persistence and
//! the CLI that drives the whole verification suite.

pub mod chains;
pub mod harness;
pub mod lattice;
pub mod potential;
pub mod rw_estimates;
pub mod slt;
pub mod solver;
pub mod spectrum;
pub mod walks;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("empty lattice domain: {0}")]
    EmptyDomain(String),
    #[error("empty delta region: {0}")]
    EmptyDelta(String),
    #[error("domain is disconnected ({0})")]
    Disconnected(String),
    #[error("eigensolver did not converge: residual {residual:.3e} after {iters} iterations (tol {tol:.3e})")]
    NoConvergence { residual: f64, iters: usize, tol: f64 },
    #[error("linear solve did not converge: residual {residual:.3e} after {sweeps} sweeps")]
    SolverStall { residual: f64, sweeps: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Relative difference |a-b| / max(|a|,|b|,floor).
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-300);
    (a - b).abs() / scale
}
