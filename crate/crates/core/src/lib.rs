//! Stochastic variational inference for discrete latent variable models with
//! an intersectional differential-fairness penalty.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation and Adam.
//! * [`distributions`]: reparameterized samplers and log-densities.
//! * [`fairness`]: intersectional groups, streaming counts, ε-DF and the
//!   audit metric suite.
//! * [`models`]: naïve Bayes, Gaussian mixture and the special-purpose
//!   criminal-justice model, with their inference networks and ELBOs.
//! * [`training`]: the fair SVI loop, warm start, restarts, grid search and
//!   fair-model selection.
//! * [`data`]: CSV ingestion, encoding, splits and synthetic generators.
//! * [`evaluation`]: held-out likelihood, clustering, information and
//!   regression metrics, and report assembly.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod fairness;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod training;

pub use error::{Error, ErrorClass, Result};
