//! Distillation of weighted ensemble teachers into single-pass students.
//!
//! A teacher is a set of member classifiers with simplex weights fitted
//! by an entropy-regularised likelihood objective. Students reuse the
//! best member's backbone, keep its weights frozen, and learn low-rank
//! adapters plus a classification head. The softmax student learns the
//! teacher's mean prediction; the evidential student predicts Dirichlet
//! concentrations `α = 1 + softplus(z)` so one forward pass yields total,
//! aleatoric and epistemic uncertainty.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are what the CLI and experiments use.

// `!(x > 0.0)` is how validation rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dirichlet;
pub mod distill;
mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nn;
mod scalar;
pub mod special;
pub mod teacher;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type Dirichlet64 = dirichlet::DirichletParams<f64>;
pub type ProbVector64 = dirichlet::ProbVector<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Teacher64 = teacher::TeacherEnsemble<f64>;
pub type Student64 = distill::StudentModel<f64>;
pub type Breakdown64 = uncertainty::UncertaintyBreakdown<f64>;
