//! Configuration-driven experiments on top of the `phantomnet` library.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod gradients;
pub mod report;

use phantomnet::Error;

/// Process exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Label { .. } | Error::Shape(_) | Error::DataRange { .. } => 2,
        Error::Membrane(_) => 3,
        Error::NonFinite(_) => 4,
        _ => 1,
    }
}
