//! Reference measurement loop with deferred synchronisation.
//!
//! Inside an epoch only timestamp pairs are recorded. They are resolved into
//! observations, and `rate`/`loss` lines emitted, when the epoch ends or the
//! observation budget is exhausted. The budget is checked after every batch,
//! before the next one starts, so the `(obs_max + 1)`-th batch never runs.

use std::io::Write;
use std::sync::Mutex;

use serde_json::Value;

use crate::protocol::{encode_event, EventKind, MetricEvent, Observation, ObservationLog, Terminal};
use crate::workload::{
    ns_to_s, worker_seed, Clock, SyntheticWorkload, VirtualClock, Workload, WorkloadError, WorkloadKind,
    WorkloadSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TimerConfig {
    pub obs_min: u32,
    pub obs_max: u32,
    pub epochs_max: u32,
    /// When false every batch is flushed immediately (instrumentation inside
    /// the timed region; only useful for comparison).
    pub defer_flush: bool,
}

impl Default for TimerConfig {
    fn default() -> Self {
        Self {
            obs_min: 30,
            obs_max: 60,
            epochs_max: 10,
            defer_flush: true,
        }
    }
}

/// Where metric events go. Implementations must write each event atomically.
pub trait MetricSink: Sync {
    fn emit(&self, event: &MetricEvent);
}

#[derive(Debug, Default)]
pub struct MemorySink(Mutex<Vec<MetricEvent>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_events(self) -> Vec<MetricEvent> {
        self.0.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}

impl MetricSink for MemorySink {
    fn emit(&self, event: &MetricEvent) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push(event.clone());
    }
}

/// Encodes events as protocol lines; one `write_all` per line.
pub struct LineSink<W: Write + Send>(Mutex<W>);

impl<W: Write + Send> LineSink<W> {
    pub fn new(writer: W) -> Self {
        Self(Mutex::new(writer))
    }
}

impl<W: Write + Send> MetricSink for LineSink<W> {
    fn emit(&self, event: &MetricEvent) {
        let Ok(line) = encode_event(event) else {
            return;
        };
        let mut w = self.0.lock().unwrap_or_else(|p| p.into_inner());
        // a closed channel must not kill the measured loop
        let _ = w.write_all(line.as_bytes()).and_then(|_| w.flush());
    }
}

/// Forwards to two sinks.
pub struct Tee<'a>(pub &'a dyn MetricSink, pub &'a dyn MetricSink);

impl MetricSink for Tee<'_> {
    fn emit(&self, event: &MetricEvent) {
        self.0.emit(event);
        self.1.emit(event);
    }
}

/// One recorded but not yet resolved batch timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingTiming {
    pub start_ns: u64,
    pub end_ns: u64,
    pub work: u64,
    pub loss: Option<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct EpochBuffer {
    pending: Vec<PendingTiming>,
}

/// Result of resolving an epoch buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flushed {
    pub observations: Vec<Observation>,
    /// Lines to emit, in order: an optional `loss` then a `rate` per observation.
    pub events: Vec<MetricEvent>,
    /// Tuples dropped because they ended before they started.
    pub faults: u64,
}

impl EpochBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timing: PendingTiming) {
        self.pending.push(timing);
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Resolve every pending timing, in order, and empty the buffer.
    ///
    /// `now` stamps the emitted lines. When `first_is_warmup` is set, the first
    /// valid observation is flagged as warmup.
    pub fn flush(&mut self, task: &str, units: &str, now: f64, first_is_warmup: bool) -> Flushed {
        let mut out = Flushed::default();
        let mut warmup = first_is_warmup;
        for t in self.pending.drain(..) {
            if t.end_ns < t.start_ns || t.work == 0 {
                out.faults += 1;
                continue;
            }
            let elapsed = (t.end_ns - t.start_ns) as f64 * 1e-9;
            if elapsed <= 0.0 {
                out.faults += 1;
                continue;
            }
            let obs = Observation {
                task: task.to_string(),
                work: t.work,
                elapsed,
                loss: t.loss,
                warmup,
            };
            if let Some(loss) = t.loss {
                out.events
                    .push(MetricEvent::new(EventKind::Loss, now, task).with("loss", loss));
            }
            let mut rate = MetricEvent::rate(now, task, t.work, elapsed, units)
                .with("end", ns_to_s(t.end_ns));
            if warmup {
                rate = rate.with("warmup", true);
            }
            out.events.push(rate);
            out.observations.push(obs);
            warmup = false;
        }
        out
    }
}

/// What one worker's timing loop produced.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReport {
    pub task: String,
    pub observations: Vec<Observation>,
    pub terminal: Terminal,
    pub faults: u64,
    pub batches_started: u64,
    pub epochs_started: u32,
    /// Whether the loop ended through the budget stop signal.
    pub stopped: bool,
}

/// Raised at the budget check once `obs_max` observations exist.
struct StopProgram;

enum BatchStep {
    Continue,
    Stop(StopProgram),
}

/// Run the timed loop for one worker.
pub fn run_worker(
    task: &str,
    units: &str,
    workload: &mut dyn Workload,
    clock: &mut dyn Clock,
    cfg: &TimerConfig,
    sink: &dyn MetricSink,
) -> WorkerReport {
    let mut report = WorkerReport {
        task: task.to_string(),
        observations: Vec::new(),
        terminal: Terminal::Success,
        faults: 0,
        batches_started: 0,
        epochs_started: 0,
        stopped: false,
    };
    let budget = cfg.obs_max as usize;
    sink.emit(&MetricEvent::new(EventKind::Start, clock.now_s(), task));

    let mut crash: Option<WorkloadError> = None;
    'epochs: for epoch in 0..cfg.epochs_max {
        report.epochs_started += 1;
        sink.emit(
            &MetricEvent::new(EventKind::Phase, clock.now_s(), task)
                .with("name", "epoch")
                .with("epoch", epoch),
        );
        let mut buf = EpochBuffer::new();
        let mut start = clock.now_ns();
        let mut step = BatchStep::Continue;

        for _ in 0..workload.batches_per_epoch() {
            report.batches_started += 1;
            match workload.run_batch(clock) {
                Ok(batch) => {
                    let end = clock.now_ns();
                    buf.push(PendingTiming {
                        start_ns: start,
                        end_ns: end,
                        work: batch.work,
                        loss: Some(batch.loss),
                    });
                    if !cfg.defer_flush {
                        flush_into(&mut buf, &mut report, task, units, clock, sink, epoch);
                    }
                    if report.observations.len() + buf.len() >= budget {
                        step = BatchStep::Stop(StopProgram);
                        break;
                    }
                    start = end;
                }
                Err(e) => {
                    crash = Some(e);
                    break;
                }
            }
        }

        flush_into(&mut buf, &mut report, task, units, clock, sink, epoch);
        if crash.is_some() {
            break 'epochs;
        }
        if let BatchStep::Stop(StopProgram) = step {
            report.stopped = true;
            sink.emit(
                &MetricEvent::new(EventKind::Stop, clock.now_s(), task)
                    .with("observations", report.observations.len() as u64)
                    .with("batches_started", report.batches_started),
            );
            break 'epochs;
        }
    }

    report.terminal = if let Some(e) = crash {
        Terminal::Error(e.to_string())
    } else if report.observations.len() < cfg.obs_min as usize {
        Terminal::Error("insufficient observations".into())
    } else {
        Terminal::Success
    };
    let now = clock.now_s();
    match &report.terminal {
        Terminal::Success => sink.emit(
            &MetricEvent::new(EventKind::Success, now, task)
                .with("observations", report.observations.len() as u64),
        ),
        Terminal::Error(msg) => {
            sink.emit(&MetricEvent::new(EventKind::Error, now, task).with("message", msg.as_str()))
        }
        Terminal::Timeout => {}
    }
    sink.emit(&MetricEvent::new(EventKind::End, now, task).with("faults", report.faults));
    report
}

fn flush_into(
    buf: &mut EpochBuffer,
    report: &mut WorkerReport,
    task: &str,
    units: &str,
    clock: &dyn Clock,
    sink: &dyn MetricSink,
    epoch: u32,
) {
    if buf.is_empty() {
        return;
    }
    let now = clock.now_s();
    sink.emit(
        &MetricEvent::new(EventKind::Phase, now, task)
            .with("name", "flush")
            .with("epoch", epoch),
    );
    let flushed = buf.flush(task, units, now, report.observations.is_empty());
    for e in &flushed.events {
        sink.emit(e);
    }
    report.faults += flushed.faults;
    report.observations.extend(flushed.observations);
}

/// Task identity of worker `i`; single-worker runs use `"train"`.
pub fn task_name(spec: &WorkloadSpec, worker: u32) -> String {
    if spec.kind == WorkloadKind::Multiworker {
        format!("worker-{worker}")
    } else {
        "train".to_string()
    }
}

/// Run a synthetic workload under the timed loop with `make_clock` providing
/// each worker's clock. Multiworker specs run their workers on separate threads.
pub fn run_synthetic<C, F>(
    spec: &WorkloadSpec,
    cfg: &TimerConfig,
    seed: u64,
    make_clock: F,
    sink: &dyn MetricSink,
) -> Result<Vec<WorkerReport>, WorkloadError>
where
    C: Clock,
    F: Fn() -> C + Sync,
{
    spec.validate(cfg.obs_max)?;
    if cfg.obs_min == 0 || cfg.obs_min > cfg.obs_max || cfg.epochs_max == 0 {
        return Err(WorkloadError::Invalid(
            "timer requires 0 < obs_min <= obs_max and epochs_max > 0".into(),
        ));
    }
    let config = MetricEvent::new(EventKind::Config, make_clock().now_s(), "main")
        .with("kind", spec.kind.as_str())
        .with("batch_size", spec.batch_size)
        .with("base_rate", spec.base_rate)
        .with("workers", spec.workers)
        .with("obs_min", cfg.obs_min)
        .with("obs_max", cfg.obs_max)
        .with("seed", Value::from(seed));
    sink.emit(&config);

    let run_one = |worker: u32| {
        let task = task_name(spec, worker);
        let mut workload = SyntheticWorkload::new(spec.clone(), worker_seed(seed, worker));
        let mut clock = make_clock();
        run_worker(&task, &spec.units, &mut workload, &mut clock, cfg, sink)
    };

    let workers = if spec.kind == WorkloadKind::Multiworker {
        spec.workers
    } else {
        1
    };
    // no threads in the browser; virtual clocks make the order irrelevant
    if workers == 1 || cfg!(target_family = "wasm") {
        return Ok((0..workers).map(&run_one).collect());
    }
    Ok(std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers).map(|w| s.spawn(move || run_one(w))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    }))
}

/// Run a synthetic workload on the virtual clock and collect its log.
pub fn timed_iterate(spec: &WorkloadSpec, cfg: &TimerConfig, seed: u64) -> Result<ObservationLog, WorkloadError> {
    let sink = MemorySink::new();
    let reports = run_synthetic(spec, cfg, seed, VirtualClock::new, &sink)?;
    Ok(combine(reports, sink.into_events()))
}

/// Merge per-worker reports into one process log. The process fails if any worker does.
pub fn combine(reports: Vec<WorkerReport>, raw_events: Vec<MetricEvent>) -> ObservationLog {
    let terminal = reports
        .iter()
        .find_map(|r| match &r.terminal {
            Terminal::Success => None,
            other => Some(other.clone()),
        })
        .unwrap_or(Terminal::Success);
    ObservationLog {
        process_id: "local".into(),
        faults: reports.iter().map(|r| r.faults).sum(),
        observations: reports.into_iter().flat_map(|r| r.observations).collect(),
        terminal,
        raw_events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant() -> WorkloadSpec {
        WorkloadSpec {
            units: "images".into(),
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn constant_run_hits_budget() {
        let log = timed_iterate(&constant(), &TimerConfig::default(), 7).unwrap();
        assert_eq!(log.terminal, Terminal::Success);
        assert_eq!(log.observations.len(), 60);
        assert!(log.observations.iter().all(|o| o.rate() == 64.0));
        assert!(log.observations[0].warmup);
        assert!(log.observations[1..].iter().all(|o| !o.warmup));
    }

    #[test]
    fn stop_lands_mid_third_epoch() {
        let sink = MemorySink::new();
        let cfg = TimerConfig::default();
        let reports = run_synthetic(&constant(), &cfg, 1, VirtualClock::new, &sink).unwrap();
        let r = &reports[0];
        assert!(r.stopped);
        assert_eq!(r.epochs_started, 3);
        assert_eq!(r.batches_started, 60);
        let flush_sizes: Vec<usize> = {
            let events = sink.into_events();
            let mut sizes = Vec::new();
            for e in &events {
                match e.event {
                    EventKind::Phase if e.data["name"] == "flush" => sizes.push(0),
                    EventKind::Rate => *sizes.last_mut().unwrap() += 1,
                    _ => {}
                }
            }
            sizes
        };
        assert_eq!(flush_sizes, vec![25, 25, 10]);
    }

    #[test]
    fn crash_keeps_gathered_observations() {
        let spec = WorkloadSpec {
            kind: WorkloadKind::Crashing,
            crash_after: Some(10),
            ..constant()
        };
        let log = timed_iterate(&spec, &TimerConfig::default(), 0).unwrap();
        assert!(matches!(log.terminal, Terminal::Error(_)));
        assert_eq!(log.observations.len(), 10);
    }

    #[test]
    fn too_few_epochs_is_insufficient() {
        let cfg = TimerConfig {
            epochs_max: 1,
            ..TimerConfig::default()
        };
        let log = timed_iterate(&constant(), &cfg, 0).unwrap();
        assert_eq!(log.terminal, Terminal::Error("insufficient observations".into()));
        assert_eq!(log.observations.len(), 25);
    }

    #[test]
    fn flush_three_tuples() {
        let mut buf = EpochBuffer::new();
        for i in 0..3u64 {
            buf.push(PendingTiming {
                start_ns: i * 500_000_000,
                end_ns: (i + 1) * 500_000_000,
                work: 32,
                loss: None,
            });
        }
        let out = buf.flush("t", "images", 2.0, false);
        assert!(buf.is_empty());
        assert_eq!(out.observations.len(), 3);
        assert!(out.observations.iter().all(|o| o.rate() == 64.0));
        assert_eq!(out.events.len(), 3);
        assert_eq!(out.faults, 0);
    }

    #[test]
    fn flush_empty_and_faulty() {
        assert_eq!(EpochBuffer::new().flush("t", "u", 0.0, true), Flushed::default());
        let mut buf = EpochBuffer::new();
        buf.push(PendingTiming { start_ns: 10, end_ns: 5, work: 1, loss: None });
        buf.push(PendingTiming { start_ns: 10, end_ns: 20, work: 1, loss: Some(0.1) });
        let out = buf.flush("t", "u", 0.0, true);
        assert_eq!(out.faults, 1);
        assert_eq!(out.observations.len(), 1);
        assert!(out.observations[0].warmup);
        assert_eq!(out.events[0].event, EventKind::Loss);
    }

    #[test]
    fn multiworker_tasks_are_distinct() {
        let spec = WorkloadSpec {
            kind: WorkloadKind::Multiworker,
            workers: 4,
            ..constant()
        };
        let log = timed_iterate(&spec, &TimerConfig::default(), 9).unwrap();
        assert!(log.terminal.is_success());
        let mut tasks: Vec<_> = log.observations.iter().map(|o| o.task.clone()).collect();
        tasks.sort();
        tasks.dedup();
        assert_eq!(tasks.len(), 4);
        for task in &tasks {
            let times: Vec<f64> = log
                .raw_events
                .iter()
                .filter(|e| &e.task == task)
                .map(|e| e.time)
                .collect();
            assert!(times.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn undeferred_flush_emits_per_batch() {
        let cfg = TimerConfig {
            defer_flush: false,
            ..TimerConfig::default()
        };
        let log = timed_iterate(&constant(), &cfg, 0).unwrap();
        assert_eq!(log.observations.len(), 60);
        let flushes = log
            .raw_events
            .iter()
            .filter(|e| e.event == EventKind::Phase && e.data["name"] == "flush")
            .count();
        assert_eq!(flushes, 60);
    }
}
