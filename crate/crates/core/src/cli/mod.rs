//! Experiment runner: dataset generation, training, evaluation and gradient
//! checks, plus the files they read and write.

mod commands;
mod config;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, gradcheck_component, EvalArgs, GradcheckRow, Manifest, Split,
    TrainArgs,
};
pub use config::{Precision, RunConfig, SCHEMA_VERSION};

use crate::error::Error;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::Data(_) | Error::Shape { .. } => 4,
        Error::Numerical(_) | Error::NonFinite(_) | Error::Domain { .. } => 5,
        Error::Io(_) => 6,
    }
}
