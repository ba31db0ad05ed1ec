//! Configuration, orchestration and file formats of the command-line tool.

pub mod config;
pub mod records;
pub mod run;
pub mod snapshot;
pub mod verify;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use records::{parse_results, write_results, ResultRecord, Tag};
pub use run::{run_experiment, ExitStatus, RunOptions, RunSummary};
pub use snapshot::{parse_snapshot, read_snapshot, snapshot_file_name, write_snapshot};
pub use verify::{Problem, SuiteOutcome};
