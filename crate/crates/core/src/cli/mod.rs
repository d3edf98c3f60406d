//! Run configuration, weight files, and the `pfkd` command set.

mod commands;
mod config;
mod weights;

pub use commands::{error_line, execute, exit_code, run, Cli, Command, Switch};
pub use config::{RunConfig, SEED_ENV, SNAPSHOT_FILE};
pub use weights::{load_model, save_model, WeightContainer, WeightMeta, MAGIC, VERSION};
