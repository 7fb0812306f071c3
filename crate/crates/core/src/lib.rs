//! Global optimization of noisy black-box functions with a parametric
//! surrogate.
//!
//! The optimizer runs in two phases. Phase I draws `n` uniform points, observes
//! the objective and fits the surrogate's parameters by non-linear least
//! squares. Phase II keeps a gradient-outer-product covariance over the
//! parameters, re-centres a confidence ellipsoid every round with a closed-form
//! regularized least-squares step and queries the point whose optimistic value
//! over that ellipsoid is largest.
//!
//! Modules:
//! - [`model`]: differentiable surrogate families (two-layer sigmoid network, linear, constant).
//! - [`phase1`]: uniform sampling, gradient-descent fitting and the expected-loss diagnostic.
//! - [`engine`]: covariance state, closed-form centre, confidence radius schedule, diagnostics.
//! - [`acquisition`]: optimistic point selection over the box and the ellipsoid.
//! - [`objectives`]: benchmark functions, noisy oracle, regret accounting.
//! - [`gp`]: Gaussian-process baselines (UCB, EI, PI) with a Matérn 5/2 kernel.
//! - [`runner`]: end-to-end runs, repetition suites and CSV output.
//! - [`config`]: flat `key = value` run settings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod gp;
pub mod model;
pub mod objectives;
pub mod phase1;
pub mod runner;

pub use domain::{BoxDomain, ParamVector};
pub use error::{Error, Result};
