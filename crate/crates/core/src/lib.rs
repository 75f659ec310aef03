//! Byzantine-robust distributed learning on a simulated master-worker system.
//!
//! The crate runs three protocol families over the same synchronous round
//! loop, with any subset of workers replaced by adversaries:
//!
//! - **stochastic ADMM** on the TV-penalised consensus problem: workers upload
//!   box-projected dual variables ([`algorithms::admm_worker_step`],
//!   [`algorithms::admm_dual_step`], [`algorithms::admm_master_step`]);
//! - **RSA**, the stochastic subgradient method on the same objective: workers
//!   upload primal variables and the master only sees their signs;
//! - **aggregation SGD**: workers upload stochastic gradients which the master
//!   combines by mean, coordinate median or geometric median.
//!
//! Around these sit the loss models ([`model`]), the attack generators
//! ([`attacks`]), dataset parsing and partitioning ([`data`]), the round
//! engine with its metrics and verification oracles ([`engine`]), and the
//! configuration-driven experiment runner ([`cli`]).
//!
//! Every run is a pure function of its [`engine::ExperimentConfig`]: the same
//! seed gives bit-identical metrics regardless of the rayon thread count.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod attacks;
pub mod cli;
pub mod data;
pub mod engine;
mod error;
pub mod model;
mod rng;

pub use error::{Error, Result};
pub use model::ModelVector;
