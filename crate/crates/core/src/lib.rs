//! Bayesian adaptive control of a hidden static signal observed through a
//! controlled Gaussian channel, solved on the space of filter measures.
//!
//! The signal takes finitely many values. The controller chooses a
//! polynomial sensing function `h(v, ·)` and observes
//! `dY = h(v, X) dt + dW`; the posterior `ξ_t` is the state of a discounted
//! control problem. Modules:
//!
//! * [`actions`]: sensing functions, admissible ellipsoid, action grids
//! * [`measures`]: atomic measures, Bayes updates, simplex lattices
//! * [`filter`]: filter SDE, exact transitions, path simulation
//! * [`objective`]: discounted cost and Monte Carlo estimation
//! * [`dp`]: Bellman operator and value iteration on dyadic time grids
//! * [`hjb`]: derivatives of functionals, generator, HJB residuals

// Float guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actions;
pub mod checks;
pub mod cli;
pub mod config;
pub mod control;
pub mod dp;
pub mod error;
pub mod filter;
pub mod hjb;
pub mod io;
pub mod measures;
pub mod objective;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
