//! Phase driver: install, prepare and run benchmarks as supervised child
//! processes over a declared device pool.

mod phases;
mod plan;
mod supervise;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::ConfigError;
use crate::rundir::RunDirError;

pub use phases::{
    data_dir, env_dir, install, phase_complete, prepare, run, Phase, PhaseStatus, RunOptions, RunRecord, RunSummary,
};
pub use plan::{plan_launches, DevicePool, PlanError, ProcessPlan};
pub use supervise::{supervise, Classified, ProcessOutcome, METRICS_FD};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error("install/prepare not complete for: {}", .0.join(", "))]
    SetupIncomplete(Vec<String>),
}

impl ExecError {
    fn io(path: &Path, source: io::Error) -> Self {
        ExecError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
