//! Folding observations into per-benchmark performance and the global score.
//!
//! The global score is a weighted geometric mean of `p·s + 1`, evaluated in
//! the log domain:
//!
//! ```text
//! score = exp( Σ w_i · ln(1 + p_i·s_i) / Σ w_i )
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BenchmarkSpec, Scale};
use crate::protocol::{Observation, ObservationLog};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no weighted benchmarks")]
    NoWeightedBenchmarks,
    #[error("benchmark name mismatch: `{candidate}` vs baseline `{baseline}`")]
    NameMismatch { candidate: String, baseline: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub bench: String,
    pub weight: f64,
    /// Units of work per second; 0 when nothing succeeded.
    pub perf: f64,
    pub success_rate: f64,
    pub n_processes: usize,
    pub per_process_rates: Vec<Option<f64>>,
}

impl BenchResult {
    /// A result from already-known values, e.g. published tables.
    pub fn known(bench: impl Into<String>, weight: f64, perf: f64, success_rate: f64) -> Self {
        Self {
            bench: bench.into(),
            weight,
            perf,
            success_rate,
            n_processes: 0,
            per_process_rates: Vec::new(),
        }
    }

    pub fn failed(&self) -> bool {
        self.success_rate == 0.0 || self.perf == 0.0
    }
}

/// Middle value of `values`; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Per-process rate: median observation rate per emitting task, summed over
/// tasks. Single-task processes get the plain median.
pub fn fold_observations(observations: &[Observation], drop_warmup: bool) -> Option<f64> {
    let mut per_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for o in observations.iter().filter(|o| !(drop_warmup && o.warmup)) {
        per_task.entry(o.task.as_str()).or_default().push(o.rate());
    }
    if per_task.is_empty() {
        return None;
    }
    Some(per_task.values_mut().filter_map(|r| median(r)).sum())
}

pub fn fold_process(log: &ObservationLog, drop_warmup: bool) -> Option<f64> {
    fold_observations(&log.observations, drop_warmup)
}

/// One process's contribution to a benchmark fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessSummary {
    pub succeeded: bool,
    pub rate: Option<f64>,
}

/// Fold the processes of one benchmark run.
///
/// Single-device benchmarks average the successful processes and count each
/// process toward the success rate. Gang benchmarks sum the ranks' rates
/// without normalisation and succeed or fail as a unit.
pub fn fold_bench(spec: &BenchmarkSpec, processes: &[ProcessSummary]) -> BenchResult {
    let planned = processes.len();
    let per_process_rates: Vec<Option<f64>> = processes
        .iter()
        .map(|p| if p.succeeded { p.rate } else { None })
        .collect();
    let ok: Vec<f64> = per_process_rates.iter().flatten().copied().collect();

    let (perf, success_rate) = if planned == 0 {
        (0.0, 0.0)
    } else if spec.scale == Scale::SingleDevice {
        if ok.is_empty() {
            (0.0, 0.0)
        } else {
            (ok.iter().sum::<f64>() / ok.len() as f64, ok.len() as f64 / planned as f64)
        }
    } else if ok.len() == planned {
        (ok.iter().sum(), 1.0)
    } else {
        (0.0, 0.0)
    };

    BenchResult {
        bench: spec.name.clone(),
        weight: spec.weight,
        perf,
        success_rate,
        n_processes: planned,
        per_process_rates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteScore {
    pub score: f64,
    /// `w_i · ln(1 + p_i·s_i)` per scored benchmark.
    pub contributions: BTreeMap<String, f64>,
    pub total_weight: f64,
}

/// Weighted geometric mean of `p·s + 1` over benchmarks with positive weight.
/// Failed or missing benchmarks contribute `ln 1 = 0` but keep their weight.
pub fn suite_score(results: &[BenchResult]) -> Result<SuiteScore, AggregateError> {
    let mut contributions = BTreeMap::new();
    let mut total_weight = 0.0;
    let mut log_sum = 0.0;
    let mut comp = 0.0;
    for r in results.iter().filter(|r| r.weight > 0.0) {
        let c = r.weight * (r.perf * r.success_rate).ln_1p();
        // Neumaier summation keeps the result independent of input order
        let t = log_sum + c;
        comp += if f64::abs(log_sum) >= c.abs() {
            (log_sum - t) + c
        } else {
            (c - t) + log_sum
        };
        log_sum = t;
        total_weight += r.weight;
        contributions.insert(r.bench.clone(), c);
    }
    if total_weight <= 0.0 {
        return Err(AggregateError::NoWeightedBenchmarks);
    }
    // the geometric mean of identical terms is that term; skip exp(ln(x)) rounding
    let mut scored = results.iter().filter(|r| r.weight > 0.0).map(|r| r.perf * r.success_rate);
    let first = scored.next().unwrap_or(0.0);
    if scored.all(|x| x == first) {
        return Ok(SuiteScore {
            score: first + 1.0,
            contributions,
            total_weight,
        });
    }
    Ok(SuiteScore {
        score: ((log_sum + comp) / total_weight).exp(),
        contributions,
        total_weight,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub bench: String,
    pub baseline_perf: Option<f64>,
    pub candidate_perf: Option<f64>,
    pub ratio: Option<f64>,
}

pub fn ratio_to_baseline(candidate: &BenchResult, baseline: &BenchResult) -> Result<RatioRow, AggregateError> {
    if candidate.bench != baseline.bench {
        return Err(AggregateError::NameMismatch {
            candidate: candidate.bench.clone(),
            baseline: baseline.bench.clone(),
        });
    }
    let present = |r: &BenchResult| (!r.failed()).then_some(r.perf);
    let baseline_perf = present(baseline);
    let candidate_perf = present(candidate);
    let ratio = match (candidate_perf, baseline_perf) {
        (Some(c), Some(b)) if b > 0.0 => Some(c / b),
        _ => None,
    };
    Ok(RatioRow {
        bench: candidate.bench.clone(),
        baseline_perf,
        candidate_perf,
        ratio,
    })
}
