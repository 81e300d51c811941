//! Large-sample detection performance of sensor activation patterns for a
//! one-dimensional Gauss-Markov (Ornstein-Uhlenbeck) field observed in white
//! noise.
//!
//! The crate is organised bottom-up:
//!
//! * [`field_model`]: field parameters, sensor layouts, exact covariance and
//!   synthetic observations.
//! * [`kalman_exponent`]: closed-form Neyman-Pearson error exponents from the
//!   steady-state innovations of the H1 Kalman filter (scalar, clustered and
//!   arbitrary periodic layouts).
//! * [`config_opt`]: optimal correlation / spacing and parameter sweeps.
//! * [`mc_detector`]: an independent Monte Carlo detector used to check every
//!   closed form.
//! * [`cli`]: the `corrfield` command-line front end.
//!
//! Monte Carlo trials and sweep grids run on rayon when the `parallel`
//! feature is enabled (the default); see [`parallel::Execution`].

pub mod cli;
pub mod config_opt;
pub mod error;
pub mod field_model;
pub mod kalman_exponent;
pub(crate) mod linalg;
pub mod mc_detector;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
pub use field_model::{
    correlation_from_spacing, sample_observations, signal_covariance, CorrelationCoefficient,
    FieldParams, Hypothesis, SensorLayout,
};
pub use kalman_exponent::{
    build_periodic_state_space, clustering_exponent, exponent, scalar_exponent,
    scalar_riccati_fixed_point, vector_exponent, vector_lyapunov_solve, vector_riccati_solve,
    ExponentResult, Innovations, ScalarInnovations, StateSpace,
};
pub use parallel::Execution;
