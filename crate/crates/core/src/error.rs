//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by configuration validation, history access, and the
/// numerical routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A configured quantity failed a structural requirement.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dimension mismatch between interacting objects.
    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// A history lookup fell outside the covered time span.
    #[error("time {requested} outside covered span [{span_start}, {span_end}]")]
    OutOfSpan {
        requested: f64,
        span_start: f64,
        span_end: f64,
    },

    /// A state or derived quantity became non-finite during integration.
    #[error("non-finite value in {subsystem} at t = {time}")]
    NonFinite { subsystem: String, time: f64 },

    /// The observer correction is undefined: the Lyapunov gradient vanished
    /// outside the absorbing sublevel set.
    #[error("Lyapunov gradient norm {grad_norm:e} below guard at V = {v_value} (|z| = {z_norm})")]
    SingularGradient {
        grad_norm: f64,
        v_value: f64,
        z_norm: f64,
    },

    /// A sampled domain rejected every candidate point.
    #[error("domain sampling failed: {0}")]
    Domain(String),

    /// A runtime invariant of the closed loop failed along a trajectory.
    #[error("invariant violated at t = {time}: {what} = {value} exceeds {bound}")]
    Invariant {
        what: String,
        time: f64,
        value: f64,
        bound: f64,
    },

    /// An estimator or fit was asked for with insufficient data.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Filesystem or serialization failure while writing reports.
    #[error("output error: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;
