//! Batch experiment orchestration for the window-rl laboratory: loads a
//! model and an experiment config, runs oracles, learners and bounds, and
//! writes deterministic result files.

pub mod commands;
pub mod config;

use std::fmt;

use window_rl_core::Error;

/// Exit code of a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit code of a domain error (invalid model, non-ergodic chain, ...).
pub const EXIT_DOMAIN: i32 = 1;
/// Exit code of an I/O or configuration error.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum Failure {
    /// The inputs are well formed but the requested computation is refused.
    Domain(String),
    /// Unreadable files, malformed JSON, inconsistent configuration.
    Config(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Domain(_) => EXIT_DOMAIN,
            Failure::Config(_) => EXIT_CONFIG,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Domain(m) | Failure::Config(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Config(format!("I/O error: {err}"))
    }
}

/// Variant name of a library error, printed so scripts can match on it.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidModel(_) => "InvalidModel",
        Error::InvalidArgument(_) => "InvalidArgument",
        Error::ZeroProbabilityWindow { .. } => "ZeroProbabilityWindow",
        Error::ZeroProbabilityObservation { .. } => "ZeroProbabilityObservation",
        Error::OutOfRange { .. } => "OutOfRange",
        Error::EnumerationTooLarge { .. } => "EnumerationTooLarge",
        Error::MultipleRecurrentClasses { .. } => "MultipleRecurrentClasses",
        Error::BadPartition(_) => "BadPartition",
        Error::SingularA { .. } => "SingularA",
        Error::NoConvergenceCertificate => "NoConvergenceCertificate",
        Error::DivergenceDetected { .. } => "DivergenceDetected",
        Error::DegenerateGram { .. } => "DegenerateGram",
        Error::MissingLipschitzConstant => "MissingLipschitzConstant",
        Error::TooLarge(_) => "TooLarge",
        Error::LinearProgram(_) => "LinearProgram",
        Error::Io(_) => "Io",
        Error::Json(_) => "Json",
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let message = format!("{}: {err}", error_kind(&err));
        match err {
            Error::Io(_) | Error::Json(_) => Failure::Config(message),
            _ => Failure::Domain(message),
        }
    }
}
