//! Command implementations behind the `wstan` binary: corpus generation,
//! training, evaluation, single-query inference, gradient checking, and
//! the defaults listing. The binary is a thin argument-parsing shell; all
//! behavior lives here so tests can drive it in-process.

pub mod commands;
pub mod config;

use wstan_core::error::Error;

/// Process exit code classes: 1 usage or configuration, 2 input data,
/// 3 numeric failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Precondition { .. }
        | Error::Dimension { .. }
        | Error::Contract { .. }
        | Error::Interval(_)
        | Error::Moment(_) => 1,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::Generation(_)
        | Error::Sampling(_)
        | Error::Compatibility(_)
        | Error::Vocabulary(_)
        | Error::EmptySentence
        | Error::Protocol(_)
        | Error::Metric(_) => 2,
        Error::Numeric { .. } => 3,
    }
}
