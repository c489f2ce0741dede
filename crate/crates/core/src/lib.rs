//! Adversarial debiasing: train a predictor jointly with an adversary that
//! tries to recover a protected variable from the predictor's output, and
//! steer the predictor's gradient so it never helps the adversary.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense/sparse vectors, projection, seeded sampling, PCA,
//!   and the normal CDF.
//! - [`grad_engine`]: flattened parameters, Adam, schedules, the debiasing
//!   direction, and a finite-difference gradient checker.
//! - [`models`]: logistic and analogy predictors, the three adversaries, and
//!   their hand-derived gradients.
//! - [`fairness`]: confusion matrices, parity/odds gaps, z-tests, entropies.
//! - [`data`]: synthetic toy data, UCI Adult ingestion, embeddings and
//!   analogies.
//! - [`trainer`]: the joint training loop and evaluation.
//! - [`cli`]: the `advdebias` command-line entry points.

pub mod cli;
pub mod data;
pub mod error;
pub mod fairness;
pub mod grad_engine;
pub mod models;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
