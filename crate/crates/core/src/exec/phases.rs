use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Instant;

use serde::Serialize;

use super::plan::{plan_launches, DevicePool};
use super::supervise::{supervise, Classified, ProcessOutcome};
use super::ExecError;
use crate::config::{render_suite, BenchmarkSpec, SuiteConfig};
use crate::select::{select_benchmarks, Selector};
use crate::rundir::{write_json, BenchRecordFile, OutcomeEntry, RunMeta, META_FILE, RECORD_FILE};
use crate::template::{self, Bindings};

const INSTALL_STAMP: &str = ".benchforge-installed";
const PREPARE_STAMP: &str = ".benchforge-prepared";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Install,
    Prepare,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Install => "install",
            Phase::Prepare => "prepare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum PhaseStatus {
    Done,
    /// A stamp from an earlier successful run matched; nothing was executed.
    Skipped,
    NotRequired,
    Failed(String),
    /// Prepare could not run because install has not completed.
    Blocked,
}

impl PhaseStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PhaseStatus::Done | PhaseStatus::Skipped | PhaseStatus::NotRequired)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseStatus::Done => "done",
            PhaseStatus::Skipped => "skipped",
            PhaseStatus::NotRequired => "not-required",
            PhaseStatus::Failed(_) => "failed",
            PhaseStatus::Blocked => "blocked",
        }
    }
}

/// Commands run in their own working directory, so paths handed to them
/// must not be relative.
fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn env_dir(base_dir: &Path, bench: &str) -> PathBuf {
    base_dir.join("envs").join(bench)
}

pub fn data_dir(base_dir: &Path, bench: &str) -> PathBuf {
    base_dir.join("data").join(bench)
}

fn stamp_path(base_dir: &Path, phase: Phase, bench: &str) -> PathBuf {
    match phase {
        Phase::Install => env_dir(base_dir, bench).join(INSTALL_STAMP),
        Phase::Prepare => data_dir(base_dir, bench).join(PREPARE_STAMP),
    }
}

fn phase_cmd(spec: &BenchmarkSpec, phase: Phase) -> Option<&str> {
    match phase {
        Phase::Install => spec.install_cmd.as_deref(),
        Phase::Prepare => spec.prepare_cmd.as_deref(),
    }
    .filter(|c| !c.trim().is_empty())
}

/// Whether the phase is complete for `spec`: no command, or a stamp written
/// for the exact same resolved command.
pub fn phase_complete(spec: &BenchmarkSpec, base_dir: &Path, phase: Phase) -> bool {
    let base_dir = &absolute(base_dir);
    match phase_cmd(spec, phase) {
        None => true,
        Some(cmd) => {
            let resolved = resolve_setup_cmd(cmd, spec, base_dir);
            fs::read_to_string(stamp_path(base_dir, phase, &spec.name)).is_ok_and(|s| s == resolved)
        }
    }
}

fn resolve_setup_cmd(cmd: &str, spec: &BenchmarkSpec, base_dir: &Path) -> String {
    template::render(cmd, &Bindings::with_dirs(base_dir, &data_dir(base_dir, &spec.name)))
}

fn run_setup(spec: &BenchmarkSpec, base_dir: &Path, phase: Phase) -> PhaseStatus {
    let Some(cmd) = phase_cmd(spec, phase) else {
        return PhaseStatus::NotRequired;
    };
    if phase == Phase::Prepare && !phase_complete(spec, base_dir, Phase::Install) {
        return PhaseStatus::Blocked;
    }
    if phase_complete(spec, base_dir, phase) {
        return PhaseStatus::Skipped;
    }
    let env = env_dir(base_dir, &spec.name);
    let data = data_dir(base_dir, &spec.name);
    let cwd = if phase == Phase::Install { &env } else { &data };
    if let Err(e) = fs::create_dir_all(&env).and_then(|_| fs::create_dir_all(&data)) {
        return PhaseStatus::Failed(format!("cannot create directories: {e}"));
    }
    let resolved = resolve_setup_cmd(cmd, spec, base_dir);
    let log_path = cwd.join(format!("{}.log", phase.as_str()));
    let log = match File::create(&log_path) {
        Ok(f) => f,
        Err(e) => return PhaseStatus::Failed(format!("cannot create {}: {e}", log_path.display())),
    };
    let stderr = match log.try_clone() {
        Ok(f) => f,
        Err(e) => return PhaseStatus::Failed(e.to_string()),
    };
    let status = Command::new("sh")
        .arg("-c")
        .arg(&resolved)
        .current_dir(cwd)
        .envs(&spec.env)
        .env("BENCHFORGE_BENCH", &spec.name)
        .env("BENCHFORGE_BASE_DIR", base_dir)
        .env("BENCHFORGE_ENV_DIR", &env)
        .env("BENCHFORGE_BENCH_DIR", &data)
        .stdin(Stdio::null())
        .stdout(log)
        .stderr(stderr)
        .status();
    match status {
        Ok(s) if s.success() => match fs::write(stamp_path(base_dir, phase, &spec.name), &resolved) {
            Ok(()) => PhaseStatus::Done,
            Err(e) => PhaseStatus::Failed(format!("cannot write stamp: {e}")),
        },
        Ok(s) => PhaseStatus::Failed(format!("{} exited with {s} (see {})", phase.as_str(), log_path.display())),
        Err(e) => PhaseStatus::Failed(format!("spawn failed: {e}")),
    }
}

/// Run every enabled benchmark's install command in `base_dir/envs/<name>`.
pub fn install(cfg: &SuiteConfig, base_dir: &Path) -> Vec<(String, PhaseStatus)> {
    let base_dir = &absolute(base_dir);
    cfg.enabled()
        .map(|b| (b.name.clone(), run_setup(b, base_dir, Phase::Install)))
        .collect()
}

/// Run every enabled benchmark's prepare command in `base_dir/data/<name>`.
pub fn prepare(cfg: &SuiteConfig, base_dir: &Path) -> Vec<(String, PhaseStatus)> {
    let base_dir = &absolute(base_dir);
    cfg.enabled()
        .map(|b| (b.name.clone(), run_setup(b, base_dir, Phase::Prepare)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Name of the system under test; becomes a report column.
    pub system: String,
    /// Skip the install/prepare stamp check.
    pub no_setup_check: bool,
    /// Run only the matching benchmarks. The stored suite stays complete so
    /// partial runs remain comparable; unselected benchmarks report as missing.
    pub select: Option<Selector>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            system: "local".into(),
            no_setup_check: false,
            select: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub bench: String,
    pub outcomes: Vec<ProcessOutcome>,
    pub phase_durations: BTreeMap<String, f64>,
    pub run_dir: PathBuf,
    /// Set when no process could be planned, e.g. multi-node on one node.
    pub plan_error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.plan_error.is_some() || self.outcomes.iter().any(|o| o.classified != Classified::Success)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub records: Vec<RunRecord>,
}

fn fresh_run_dir(base_dir: &Path) -> Result<PathBuf, ExecError> {
    let runs = base_dir.join("runs");
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut dir = runs.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        dir = runs.join(format!("{stamp}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| ExecError::io(&dir, e))?;
    Ok(dir)
}

/// Failed rank in a gang takes every other rank down with it.
fn apply_gang_rule(outcomes: &mut [ProcessOutcome]) {
    if !outcomes.iter().any(|o| o.plan.gang) {
        return;
    }
    let Some(culprit) = outcomes.iter().find(|o| o.classified != Classified::Success) else {
        return;
    };
    let reason = format!("gang member failed (rank {})", culprit.plan.rank);
    for o in outcomes.iter_mut().filter(|o| o.classified == Classified::Success) {
        o.classified = Classified::Error;
        o.reason = Some(reason.clone());
    }
}

/// Execute the enabled benchmarks one after the other. Processes of one
/// benchmark run concurrently. A benchmark failure never stops the suite.
pub fn run(cfg: &SuiteConfig, pool: &DevicePool, base_dir: &Path, opts: &RunOptions) -> Result<RunSummary, ExecError> {
    let base_dir = &absolute(base_dir);
    let selected = match &opts.select {
        Some(sel) => select_benchmarks(cfg, sel)?,
        None => cfg.clone(),
    };
    if !opts.no_setup_check {
        let missing: Vec<String> = selected
            .enabled()
            .filter(|b| !phase_complete(b, base_dir, Phase::Install) || !phase_complete(b, base_dir, Phase::Prepare))
            .map(|b| b.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ExecError::SetupIncomplete(missing));
        }
    }
    let run_dir = fresh_run_dir(base_dir)?;
    let meta = RunMeta {
        system: opts.system.clone(),
        suite_hash: cfg.hash(),
        suite: render_suite(cfg),
        devices: pool.devices.clone(),
        nodes: pool.nodes,
        benches: selected.enabled().map(|b| b.name.clone()).collect(),
        started: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&run_dir.join(META_FILE), &meta)?;

    let mut records = Vec::new();
    for spec in selected.enabled() {
        records.push(run_bench(spec, pool, base_dir, &run_dir)?);
    }
    Ok(RunSummary { run_dir, records })
}

fn run_bench(spec: &BenchmarkSpec, pool: &DevicePool, base_dir: &Path, run_dir: &Path) -> Result<RunRecord, ExecError> {
    let started = Instant::now();
    let bench_dir = run_dir.join(&spec.name);
    fs::create_dir_all(&bench_dir).map_err(|e| ExecError::io(&bench_dir, e))?;

    let (plans, plan_error) = match plan_launches(spec, pool, base_dir) {
        Ok(p) => (p, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let planned = started.elapsed().as_secs_f64();

    let mut outcomes: Vec<ProcessOutcome> = thread::scope(|s| {
        let handles: Vec<_> = plans
            .iter()
            .map(|plan| {
                let path = bench_dir.join(format!("{}.jsonl", plan.rank));
                s.spawn(move || supervise(plan, &path, spec.obs_min))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("supervisor thread panicked"))
            .collect()
    });
    apply_gang_rule(&mut outcomes);
    let duration_s = started.elapsed().as_secs_f64();

    let file = BenchRecordFile {
        bench: spec.name.clone(),
        gang: spec.scale.is_gang(),
        plan_error: plan_error.clone(),
        outcomes: outcomes
            .iter()
            .map(|o| OutcomeEntry {
                rank: o.plan.rank,
                devices: o.plan.devices.clone(),
                node: o.plan.node,
                exit_code: o.exit_code,
                duration_s: o.duration_s,
                classified: match o.classified {
                    Classified::Success => "success",
                    Classified::Error => "error",
                    Classified::Timeout => "timeout",
                }
                .into(),
                reason: o.reason.clone(),
                observations: o.log.observations.len(),
                rejected_lines: o.rejected_lines,
            })
            .collect(),
        duration_s,
    };
    write_json(&bench_dir.join(RECORD_FILE), &file)?;

    Ok(RunRecord {
        bench: spec.name.clone(),
        outcomes,
        phase_durations: BTreeMap::from([("plan".to_string(), planned), ("run".to_string(), duration_s - planned)]),
        run_dir: run_dir.to_path_buf(),
        plan_error,
    })
}
