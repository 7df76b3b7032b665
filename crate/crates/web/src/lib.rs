//! Browser demo. Each export takes and returns JSON text so the page needs no
//! glue beyond `JSON.parse`.

use benchforge::aggregate::{fold_observations, suite_score, BenchResult};
use benchforge::design::{classes_in_order, mlcm_build, mlcm_metrics, parse_samples_csv};
use benchforge::protocol::{encode_event, Terminal};
use benchforge::timer::{combine, run_synthetic, MemorySink, TimerConfig};
use benchforge::workload::{VirtualClock, WorkloadSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct ScoreRow {
    pub bench: String,
    #[serde(default = "one")]
    pub weight: f64,
    pub perf: f64,
    #[serde(default = "one")]
    pub success_rate: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Serialize)]
pub struct ScoreEffect {
    pub bench: String,
    /// `w·ln(1 + p·s)`.
    pub contribution: f64,
    /// Global score if this benchmark failed outright.
    pub if_failed: f64,
    /// Global score if this benchmark ran twice as fast.
    pub if_doubled: f64,
}

#[derive(Debug, Serialize)]
pub struct ScoreView {
    pub score: f64,
    pub total_weight: f64,
    pub benches: Vec<ScoreEffect>,
}

fn score_of(rows: &[BenchResult]) -> Result<f64, String> {
    suite_score(rows).map(|s| s.score).map_err(|e| e.to_string())
}

/// Global score of a table of results, plus what each row is worth.
pub fn explore_score(rows: &[ScoreRow]) -> Result<ScoreView, String> {
    let results: Vec<BenchResult> = rows
        .iter()
        .map(|r| BenchResult::known(&r.bench, r.weight, r.perf, r.success_rate))
        .collect();
    let total = suite_score(&results).map_err(|e| e.to_string())?;
    let mut benches = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let mut variant = results.clone();
        variant[i].success_rate = 0.0;
        let if_failed = score_of(&variant)?;
        variant[i] = r.clone();
        variant[i].perf *= 2.0;
        benches.push(ScoreEffect {
            bench: r.bench.clone(),
            contribution: total.contributions.get(&r.bench).copied().unwrap_or(0.0),
            if_failed,
            if_doubled: score_of(&variant)?,
        });
    }
    Ok(ScoreView {
        score: total.score,
        total_weight: total.total_weight,
        benches,
    })
}

#[derive(Debug, Deserialize)]
pub struct SimulationInput {
    pub workload: WorkloadSpec,
    pub obs_min: u32,
    pub obs_max: u32,
    pub epochs_max: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub defer_flush: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize)]
pub struct SimulatedPoint {
    pub task: String,
    pub rate: f64,
    pub warmup: bool,
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    /// The metric stream exactly as a worker would write it.
    pub jsonl: String,
    pub observations: Vec<SimulatedPoint>,
    pub terminal: String,
    /// Per-task medians summed, warmup dropped; absent without observations.
    pub rate: Option<f64>,
    pub batches_started: u64,
    pub stopped: bool,
}

/// Run the timed loop on a virtual clock.
pub fn simulate(input: &SimulationInput) -> Result<Simulation, String> {
    let cfg = TimerConfig {
        obs_min: input.obs_min,
        obs_max: input.obs_max,
        epochs_max: input.epochs_max,
        defer_flush: input.defer_flush,
    };
    let sink = MemorySink::new();
    let reports = run_synthetic(&input.workload, &cfg, input.seed, VirtualClock::new, &sink).map_err(|e| e.to_string())?;
    let batches_started = reports.iter().map(|r| r.batches_started).sum();
    let stopped = reports.iter().all(|r| r.stopped);
    let events = sink.into_events();
    let jsonl: String = events.iter().filter_map(|e| encode_event(e).ok()).collect();
    let log = combine(reports, events);

    let mut tasks: Vec<&str> = log.observations.iter().map(|o| o.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let rate = tasks
        .iter()
        .map(|t| {
            let own: Vec<_> = log.observations.iter().filter(|o| o.task == *t).cloned().collect();
            fold_observations(&own, true)
        })
        .sum::<Option<f64>>();
    let terminal = match &log.terminal {
        Terminal::Success => "success".to_string(),
        Terminal::Error(m) => format!("error: {m}"),
        Terminal::Timeout => "timeout".to_string(),
    };
    Ok(Simulation {
        jsonl,
        observations: log
            .observations
            .iter()
            .map(|o| SimulatedPoint {
                task: o.task.clone(),
                rate: o.rate(),
                warmup: o.warmup,
            })
            .collect(),
        terminal,
        rate,
        batches_started,
        stopped,
    })
}

/// Confusion matrix and per-class metrics for annotated samples in CSV form.
pub fn mlcm(csv_text: &str, classes: Option<Vec<String>>) -> Result<Value, String> {
    let samples = parse_samples_csv(csv_text).map_err(|e| e.to_string())?;
    let classes = classes.unwrap_or_else(|| classes_in_order(&samples));
    let m = mlcm_build(&samples, &classes).map_err(|e| e.to_string())?;
    let metrics = mlcm_metrics(&m);
    Ok(json!({
        "text": m.to_text(&metrics),
        "matrix": m,
        "precision": metrics.precision_rounded(),
        "recall": metrics.recall_rounded(),
    }))
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("bad input: {e}"))
}

#[wasm_bindgen(js_name = scoreExplorer)]
pub fn score_explorer(rows_json: &str) -> Result<String, JsValue> {
    to_js(parse::<Vec<ScoreRow>>(rows_json).and_then(|rows| explore_score(&rows)))
}

#[wasm_bindgen(js_name = simulateTimedRun)]
pub fn simulate_timed_run(input_json: &str) -> Result<String, JsValue> {
    to_js(parse::<SimulationInput>(input_json).and_then(|input| simulate(&input)))
}

#[wasm_bindgen(js_name = mlcmMetrics)]
pub fn mlcm_metrics_js(samples_csv: &str, classes: &str) -> Result<String, JsValue> {
    let classes: Vec<String> = classes.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect();
    to_js(mlcm(samples_csv, (!classes.is_empty()).then_some(classes)))
}
