//! Synthetic workloads standing in for real training loops.
//!
//! A workload "processes" a batch by advancing a [`Clock`]; with the virtual
//! clock nothing sleeps and runs are fully deterministic given the seed.

use std::fmt;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Start of virtual time, in nanoseconds since the Unix epoch (2023-11-14).
pub const VIRTUAL_EPOCH_NS: u64 = 1_700_000_000_000_000_000;

pub trait Clock {
    /// Nanoseconds since the Unix epoch.
    fn now_ns(&self) -> u64;
    /// Let `ns` nanoseconds pass.
    fn advance(&mut self, ns: u64);

    fn now_s(&self) -> f64 {
        ns_to_s(self.now_ns())
    }
}

pub fn ns_to_s(ns: u64) -> f64 {
    // split to keep sub-microsecond digits exact at epoch magnitudes
    (ns / 1_000_000_000) as f64 + (ns % 1_000_000_000) as f64 * 1e-9
}

#[derive(Debug, Clone)]
pub struct VirtualClock {
    ns: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::starting_at(VIRTUAL_EPOCH_NS)
    }

    pub fn starting_at(ns: u64) -> Self {
        Self { ns }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.ns
    }

    fn advance(&mut self, ns: u64) {
        self.ns += ns;
    }
}

/// Wall-clock time; `advance` really sleeps.
#[derive(Debug, Default, Clone)]
pub struct WallClock;

impl Clock for WallClock {
    fn now_ns(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    }

    fn advance(&mut self, ns: u64) {
        std::thread::sleep(Duration::from_nanos(ns));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Constant,
    Jitter,
    Degrading,
    Crashing,
    Multiworker,
}

impl WorkloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Constant => "constant",
            WorkloadKind::Jitter => "jitter",
            WorkloadKind::Degrading => "degrading",
            WorkloadKind::Crashing => "crashing",
            WorkloadKind::Multiworker => "multiworker",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "constant" => WorkloadKind::Constant,
            "jitter" => WorkloadKind::Jitter,
            "degrading" => WorkloadKind::Degrading,
            "crashing" => WorkloadKind::Crashing,
            "multiworker" => WorkloadKind::Multiworker,
            other => return Err(format!("unknown workload kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub batch_size: u64,
    /// Units of work per second.
    pub base_rate: f64,
    /// Relative half-width of the uniform per-batch delay noise.
    pub jitter_frac: f64,
    /// Batches completed before the workload fails (crashing only).
    pub crash_after: Option<u64>,
    pub workers: u32,
    pub batches_per_epoch: u64,
    /// Relative slowdown added per batch (degrading only).
    pub slowdown: f64,
    pub units: String,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::Constant,
            batch_size: 32,
            base_rate: 64.0,
            jitter_frac: 0.0,
            crash_after: None,
            workers: 1,
            batches_per_epoch: 25,
            slowdown: 0.01,
            units: "items".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("workload crashed after {0} batches")]
    Crashed(u64),
}

impl WorkloadSpec {
    pub fn validate(&self, obs_max: u32) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if !(self.base_rate.is_finite() && self.base_rate > 0.0) {
            return bad("base_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if !(0.0..1.0).contains(&self.jitter_frac) {
            return bad("jitter_frac must lie in [0, 1)");
        }
        if self.workers == 0 {
            return bad("workers must be > 0");
        }
        if self.batches_per_epoch == 0 {
            return bad("batches_per_epoch must be > 0");
        }
        if !(self.slowdown.is_finite() && self.slowdown >= 0.0) {
            return bad("slowdown must be >= 0");
        }
        if let Some(c) = self.crash_after {
            if c >= u64::from(obs_max) {
                return bad("crash_after must be < obs_max");
            }
        }
        Ok(())
    }

    /// Nominal seconds per batch.
    pub fn base_delay_s(&self) -> f64 {
        self.batch_size as f64 / self.base_rate
    }
}

/// Outcome of one processed batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Batch {
    pub work: u64,
    pub loss: f64,
}

pub trait Workload {
    fn batches_per_epoch(&self) -> u64;
    /// Process the next batch, advancing `clock` by its duration.
    fn run_batch(&mut self, clock: &mut dyn Clock) -> Result<Batch, WorkloadError>;
}

/// Deterministic synthetic workload for one worker.
#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    index: u64,
}

/// Per-worker seed derivation so multiworker streams are independent.
pub fn worker_seed(seed: u64, worker: u32) -> u64 {
    seed ^ (u64::from(worker)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl SyntheticWorkload {
    pub fn new(spec: WorkloadSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: 0,
        }
    }

    fn next_delay_ns(&mut self) -> u64 {
        let base = self.spec.base_delay_s();
        let factor = match self.spec.kind {
            WorkloadKind::Constant | WorkloadKind::Crashing => 1.0,
            WorkloadKind::Jitter => 1.0 + self.noise(),
            WorkloadKind::Degrading => 1.0 + self.spec.slowdown * self.index as f64,
            WorkloadKind::Multiworker => {
                if self.spec.jitter_frac > 0.0 {
                    1.0 + self.noise()
                } else {
                    1.0
                }
            }
        };
        ((base * factor * 1e9).round() as u64).max(1)
    }

    fn noise(&mut self) -> f64 {
        let j = self.spec.jitter_frac;
        if j == 0.0 {
            0.0
        } else {
            self.rng.gen_range(-j..j)
        }
    }

    /// The delays the next `n` batches will take, without consuming them.
    pub fn planned_delays_ns(&self, n: usize) -> Vec<u64> {
        let mut probe = self.clone();
        (0..n)
            .map(|_| {
                let d = probe.next_delay_ns();
                probe.rng.gen::<f64>();
                probe.index += 1;
                d
            })
            .collect()
    }
}

impl Workload for SyntheticWorkload {
    fn batches_per_epoch(&self) -> u64 {
        self.spec.batches_per_epoch
    }

    fn run_batch(&mut self, clock: &mut dyn Clock) -> Result<Batch, WorkloadError> {
        if self.spec.kind == WorkloadKind::Crashing && Some(self.index) == self.spec.crash_after {
            return Err(WorkloadError::Crashed(self.index));
        }
        let delay = self.next_delay_ns();
        clock.advance(delay);
        // slowly decaying loss with a little noise
        let loss = 2.0 * (-0.02 * self.index as f64).exp() + 0.05 * self.rng.gen::<f64>();
        self.index += 1;
        Ok(Batch {
            work: self.spec.batch_size,
            loss,
        })
    }
}
