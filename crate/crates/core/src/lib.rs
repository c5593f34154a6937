//! Deep ensembles as Gaussian-process approximate posteriors.
//!
//! The ensemble's mean and empirical covariance (plus a small jitter) define
//! a Gaussian process over functions. Training maximizes a functional
//! evidence lower bound against a Monte-Carlo neural-network GP prior, with
//! the KL term evaluated exactly on finite measurement sets using the
//! Kronecker structure of the prior and the low rank of the posterior.

pub mod bandit;
pub mod baselines;
pub mod data;
pub mod degp;
pub mod error;
pub mod evalx;
pub mod gaussops;
pub mod ndcore;
pub mod nets;
pub mod priorkern;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
