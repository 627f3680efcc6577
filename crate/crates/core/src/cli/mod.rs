//! The `dts` command line: run configuration, checkpoints and subcommands.

mod checkpoint;
mod config;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, AdamRecord, Checkpoint, ModelKind, NamedArray, CHECKPOINT_VERSION};
pub use config::{ModelSection, ObjectiveSection, PathsSection, RunConfig, TrainSection};
pub use run::{exit_code, progress_line, run};
