//! Response-adaptive randomization laboratory.
//!
//! Allocation procedures for sequential trials with binary responses
//! (play-the-winner, Markov chain designs, generalized Pólya urns,
//! drop-the-loser, doubly adaptive biased coins), the closed-form
//! asymptotic variances and lower bounds they are measured against, a
//! delayed-response engine, and a Monte Carlo harness that compares the
//! two.

// `!(x > 0.0)` is how NaN gets rejected here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod config;
pub mod delay;
pub mod designs;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod rng;
pub mod session;
pub mod targets;
pub mod trial;

pub use error::{Error, Result};
pub use rng::RandomStream;
pub use trial::{Assignment, BernoulliArms, EstimatorScheme, Outcome, ParamEstimate, TrialState};
