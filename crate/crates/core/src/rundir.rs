//! On-disk run layout and loading it back for the report phase.
//!
//! ```text
//! <base>/runs/<timestamp>/meta.json
//! <base>/runs/<timestamp>/<bench>/record.json
//! <base>/runs/<timestamp>/<bench>/<rank>.jsonl
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{fold_bench, fold_process, BenchResult, ProcessSummary};
use crate::config::{parse_suite, ConfigError};
use crate::protocol::{read_stream, ObservationLog, StreamItem};
use crate::report::SystemResults;

pub const META_FILE: &str = "meta.json";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("suite stored in {path} does not parse: {source}")]
    Suite { path: PathBuf, source: ConfigError },
    #[error("no run directory found under {0}")]
    NotFound(PathBuf),
}

/// `meta.json`: everything needed to interpret the run without the original suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub system: String,
    pub suite_hash: String,
    /// The rendered suite document the run was planned from.
    pub suite: String,
    pub devices: Vec<String>,
    pub nodes: u32,
    /// Benchmarks selected for this run, in execution order.
    pub benches: Vec<String>,
    pub started: String,
    pub version: String,
}

/// One process's line in `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub rank: usize,
    pub devices: Vec<String>,
    pub node: u32,
    pub exit_code: i32,
    pub duration_s: f64,
    /// `success`, `error` or `timeout`.
    pub classified: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub observations: usize,
    #[serde(default)]
    pub rejected_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecordFile {
    pub bench: String,
    pub gang: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_error: Option<String>,
    pub outcomes: Vec<OutcomeEntry>,
    pub duration_s: f64,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunDirError> {
    let text = fs::read_to_string(path).map_err(|source| RunDirError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| RunDirError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunDirError> {
    let text = serde_json::to_string_pretty(value).expect("run records always serialize");
    fs::write(path, text + "\n").map_err(|source| RunDirError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_meta(run_dir: &Path) -> Result<RunMeta, RunDirError> {
    read_json(&run_dir.join(META_FILE))
}

/// Decode one `<rank>.jsonl` file. Undecodable lines are skipped.
pub fn read_process_log(path: &Path, process_id: &str, obs_min: u32) -> Result<ObservationLog, RunDirError> {
    let file = fs::File::open(path).map_err(|source| RunDirError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let events = read_stream(file)
        .filter_map(|item| match item {
            StreamItem::Event(e) => Some(e),
            _ => None,
        })
        .collect();
    Ok(ObservationLog::from_events(process_id, events, obs_min))
}

/// Accept a run directory itself, or a base/runs directory holding several;
/// in the latter case the most recent run is chosen.
pub fn resolve_run_dir(path: &Path) -> Result<PathBuf, RunDirError> {
    if path.join(META_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    for dir in [path.join("runs"), path.to_path_buf()] {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        let mut runs: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.join(META_FILE).is_file())
            .collect();
        runs.sort();
        if let Some(last) = runs.pop() {
            return Ok(last);
        }
    }
    Err(RunDirError::NotFound(path.to_path_buf()))
}

/// Fold a run directory into per-benchmark results, in suite order.
///
/// Every enabled benchmark of the stored suite gets a result; those that were
/// not selected for the run count as failed. Process success comes from `record.json` when
/// present (it carries exit codes and the gang rule), otherwise from the log.
pub fn load_run(run_dir: &Path, drop_warmup: bool) -> Result<SystemResults, RunDirError> {
    let meta = read_meta(run_dir)?;
    let suite = parse_suite(&meta.suite).map_err(|source| RunDirError::Suite {
        path: run_dir.join(META_FILE),
        source,
    })?;

    let mut results = Vec::new();
    for spec in suite.enabled() {
        let bench_dir = run_dir.join(&spec.name);
        let record_path = bench_dir.join(RECORD_FILE);
        if !meta.benches.contains(&spec.name) {
            results.push(BenchResult::known(&spec.name, spec.weight, 0.0, 0.0));
            continue;
        }
        let record: Option<BenchRecordFile> = if record_path.is_file() {
            Some(read_json(&record_path)?)
        } else {
            None
        };

        let mut processes = Vec::new();
        match &record {
            Some(rec) => {
                for o in &rec.outcomes {
                    let path = bench_dir.join(format!("{}.jsonl", o.rank));
                    let rate = match read_process_log(&path, &format!("{}/{}", spec.name, o.rank), spec.obs_min) {
                        Ok(log) => fold_process(&log, drop_warmup),
                        Err(_) => None,
                    };
                    processes.push(ProcessSummary {
                        succeeded: o.classified == "success",
                        rate,
                    });
                }
            }
            None if bench_dir.is_dir() => {
                for path in rank_files(&bench_dir)? {
                    let log = read_process_log(&path, &spec.name, spec.obs_min)?;
                    processes.push(ProcessSummary {
                        succeeded: log.terminal.is_success(),
                        rate: fold_process(&log, drop_warmup),
                    });
                }
            }
            None => {}
        }
        let result = if processes.is_empty() {
            BenchResult::known(&spec.name, spec.weight, 0.0, 0.0)
        } else {
            fold_bench(spec, &processes)
        };
        results.push(result);
    }

    let mut sys = SystemResults::new(meta.system, meta.suite_hash, results);
    sys.devices = meta.devices;
    sys.source = Some(run_dir.display().to_string());
    Ok(sys)
}

/// `<rank>.jsonl` files of a bench directory, ordered by rank.
pub fn rank_files(bench_dir: &Path) -> Result<Vec<PathBuf>, RunDirError> {
    let entries = fs::read_dir(bench_dir).map_err(|source| RunDirError::Io {
        path: bench_dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<(usize, PathBuf)> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter_map(|p| {
            let rank = p.file_name()?.to_str()?.strip_suffix(".jsonl")?.parse().ok()?;
            Some((rank, p))
        })
        .collect();
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}
