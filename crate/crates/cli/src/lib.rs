//! File formats, checkpoints, configuration and the `dlsm` command pipeline
//! around [`dlsm_core`].

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::parse_config;
pub use dlsm_core as core;
pub use error::{CliError, Result};
pub use pipeline::{run, Cli};
