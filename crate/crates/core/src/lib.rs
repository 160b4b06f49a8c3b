//! Kalman smoothing with missing measurements, posed as a sparse equality
//! constrained least squares problem, together with exact gradients of a
//! held-out prediction error and a proximal gradient auto-tuner.
//!
//! The crate is `no_std` (with `alloc`) so it can run anywhere a heap is
//! available; file formats and the command line live in the `ksmooth` crate.
//!
//! Pipeline overview:
//!
//! - [`model`] and [`entries`] hold the parameter tuple, measurements and
//!   index sets.
//! - [`assemble`] builds the sparse residual operator `D`, the selector `B`
//!   and the constraint values `c`.
//! - [`kkt`] forms the KKT matrix and factorizes it with a sparse LU.
//! - [`smoother`] solves the smoothing problem and scores masked entries.
//! - [`grad`] differentiates the prediction error through the KKT solve.
//! - [`prox`] and [`autotune`] implement the regularized tuning loop.
//! - [`datagen`] simulates linear systems for tests and benchmarks.
//! - [`oracle`] contains slow dense reference implementations.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(non_snake_case)]

extern crate alloc;

pub mod assemble;
pub mod autotune;
pub mod datagen;
pub mod entries;
mod error;
pub mod grad;
pub mod kkt;
pub mod model;
pub mod oracle;
pub mod prox;
pub mod rng;
pub mod smoother;
pub mod sparse;

pub use error::{Error, Result};

pub use assemble::{assemble, BlockMap, SparseProblem};
pub use autotune::{objective_f, tune, tune_with_progress, Objective, Termination, TuneConfig, TuneRecord, TuneResult};
pub use entries::{split_known, Entry, EntrySet, Split};
pub use grad::{gradient, ParameterGradient};
pub use kkt::{KktFactorization, KktSystem};
pub use model::{validate_dims, MeasurementSet, ParameterSet, SmootherSolution};
pub use prox::{Constraint, ParamTarget, Penalty, Regularizer};
pub use smoother::{forward, judge, prediction_error, smooth, ForwardPass, Judgement};
