//! Pipeline stages behind the `eegdm` command-line tool.

pub mod config;
pub mod pipeline;

pub use config::{LayerSelection, RunConfig};

use eegdm::Error;

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Numeric(_) => 4,
        Error::Shape(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => 3,
    }
}

/// One-line JSON error record.
pub fn error_line(err: &Error) -> String {
    let kind = match err {
        Error::Config(_) | Error::InvalidArgument(_) => "config",
        Error::Numeric(_) => "numeric",
        _ => "data",
    };
    serde_json::json!({ "error": kind, "code": exit_code(err), "message": err.to_string() }).to_string()
}
