//! Differentially private decentralized ADMM: simulator, zCDP accounting and
//! convergence-bound calculators.

pub mod bounds;
pub mod dataset;
pub mod engine;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod privacy;
pub mod topology;
