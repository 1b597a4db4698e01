//! Library surface of the batch driver: config parsing, run pipelines,
//! artifact emission, and quick-look plots. The `dqn` binary is a thin
//! command dispatcher over these modules.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod plot;

pub use error::{AppError, ExitCode};
