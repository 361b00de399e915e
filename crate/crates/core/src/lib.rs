//! Conditional independence testing with conditional saddlepoint approximations.
//!
//! The crate is organised bottom-up:
//!
//! * [`nef`] — Bernoulli/Poisson natural exponential families and the centered
//!   conditional CGF of a resampled cross-residual summand.
//! * [`glm`] — IRLS, lasso and kernel ridge fitters that produce the plug-in
//!   conditional means.
//! * [`saddlepoint`] — saddlepoint equation solver plus Lugannani-Rice and
//!   Robinson tail formulas.
//! * [`citest`] — spaCRT, dCRT, GCM, negative binomial score test and the
//!   sign-flipping saddlepoint test.
//! * [`hmm`] — multinomial hidden Markov model conditionals for genotype data.
//! * [`sim`] — data generators, multiple-testing corrections and replication
//!   drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod citest;
pub mod error;
pub mod glm;
pub mod hmm;
pub mod nef;
pub mod normal;
pub mod saddlepoint;
pub mod sim;

pub use error::{Error, Result};
