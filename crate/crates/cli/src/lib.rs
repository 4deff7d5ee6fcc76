//! Command implementations behind the `metatrack` binary: dataset
//! generation, meta-training, baseline training, tracking, evaluation and
//! the paired adaptation experiment.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_baselinetrain, cmd_eval, cmd_gap, cmd_gen, cmd_metatrain, cmd_track, TrainSummary,
};
pub use config::RunConfig;

use metatrack::Error;

/// Short category used in the one-line error report.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::NonFinite { .. } => "non-finite",
        Error::Domain { .. } => "domain",
        Error::Grad { .. } => "grad",
        Error::Param { .. } => "param",
        Error::Config(_) => "config",
        Error::Invalid(_) => "invalid",
        Error::InnerStep { source, .. }
        | Error::Task { source, .. }
        | Error::Iteration { source, .. } => error_kind(source),
        Error::Format { .. } => "format",
        Error::Io(_) => "io",
    }
}

/// `error kind=<kind> message=<text>` on a single line.
pub fn error_line(e: &Error) -> String {
    let message = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} message={message}", error_kind(e))
}
