//! Maximizing the probability of leaving a bequest when term life insurance
//! can be bought continuously.
//!
//! [`model`] holds the market and its closed-form constants, [`solver`] builds
//! the value function and optimal controls for every parameter regime, and
//! [`verify`] checks them against an HJB residual, a finite-difference
//! solver and Monte Carlo simulation. [`analysis`] runs parameter sweeps and
//! rebuilds the reference tables; [`cli`] wraps everything for the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod model;
pub mod rootfind;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use model::{classify_regime, derive_constants, DerivedConstants, MarketParams, Regime};
pub use solver::{solve, Solution, StrategyEval};
